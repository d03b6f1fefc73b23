"""
Semantic diversity tag ranking
==============================

Zero-shot multi-label tag ranking with per-image principal-direction matrices.
Each module covers one concern:

- sdl_wordvec   : FastText .vec parsing and label lookup
- sdl_core      : scoring, ranking / regularization losses and their gradients
- sdl_model     : linear head, forward / backward, checkpoints
- sdl_optim     : Adam with decoupled weight decay, one-cycle schedule, training
- sdl_data      : feature / label / split files and batching
- sdl_eval      : inference, mAP, P/R/F1@K, retrieval, row attribution
- sdl_synth     : synthetic world generator
- sdl_gradcheck : finite-difference gradient checks
- sdl_ablation  : ablation grids and sweeps
- sdl_tracking  : optional MLflow run tracking
- sdl_main      : command-line pipeline
"""
