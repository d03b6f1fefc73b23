"""
Synthetic fixture presets.

Each preset holds SynthConfig keyword arguments (seed excluded) plus the
number of held-out test images.
"""

standard_fixture = {
    "d_w": 32,
    "d_f": 64,
    "groups": 3,
    "labels_per_group": 20,
    "unseen_per_group": 4,
    "n_images": 6000,
    "labels_per_image": (2, 6),
    "diversity_mix": 0.6,
    "noise_sigma": 0.05,
}

# more multi-group images with more labels each, for the >6-label subset
diverse_fixture = {
    "d_w": 32,
    "d_f": 64,
    "groups": 3,
    "labels_per_group": 20,
    "unseen_per_group": 4,
    "n_images": 6000,
    "labels_per_image": (3, 10),
    "diversity_mix": 0.9,
    "noise_sigma": 0.05,
}

fixture_test_images = {
    "standard": 1000,
    "diverse": 1000,
}

fixtures = {
    "standard": standard_fixture,
    "diverse": diverse_fixture,
}
