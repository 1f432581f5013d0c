"""Pipeline configuration defaults, one dict per config section."""

# Morphable face model (procedural basis)
FACE_DEFAULTS = {
    "seed": 7,
    "rows": 32,  # latitude rings of the head mesh
    "cols": 31,  # longitude columns; odd so the midline is a column
    "k_id": 8,
    "k_exp": 8,
    "k_tex": 8,
    "coeff_clamp": 4.0,  # standard-deviation units
    "fit_regularizer": 0.0,
}

# UV unwrap, extraction and rasterization
RENDER_DEFAULTS = {
    "uv_resolution": 128,  # must be even so flip_uv is exact
    "image_size": 256,
    "background": 0.0,
    "z_eps": 1e-3,  # fraction of the bounding-box depth
    "face_scale": 0.42,  # pixels per model unit, as a fraction of image size
}

# UV texture generator and discriminators
NETWORK_DEFAULTS = {
    "feature_channels": 64,
    "residual_blocks": 3,
    "attention_channels": 32,
    "disc_channels": 32,
    "extractor_seed": 1234,
}

# Loss weights (makeup sub-weights and total-loss weights)
LOSS_DEFAULTS = {
    "lambda1": 1.0,  # lips
    "lambda2": 1.0,  # eye shadow
    "lambda3": 0.1,  # face
    "lambda_a": 1.0,
    "lambda_m": 1.0,
    "lambda_c": 10.0,
    "lambda_p": 5e-3,
    "hist_bins": 256,
    "score_eps": 1e-6,
    "generator_form": "printed",  # or "minimax" (log(1 - D(fake)))
}

# Training loop
TRAINER_DEFAULTS = {
    "seed": 0,
    "steps": 2000,
    "learning_rate": 2e-4,
    "beta1": 0.0,
    "beta2": 0.9,
    "accumulate": 1,  # gradient accumulation; 1 = off
    "d_steps": 1,  # D updates per G update
    "checkpoint_every": 500,
    "keep_checkpoints": 3,
    "log_every": 1,
    "fam_off": False,
    "mtm_off": False,
    "prefetch": 2,
    "out_dir": "runs/default",
    "dataset": "",
}

# Synthetic dataset
SYNTH_DEFAULTS = {
    "seed": 0,
    "n_makeup": 48,
    "n_plain": 16,
    "contamination_rate": 0.3,
    "max_yaw": 40.0,
    "max_pitch": 10.0,
    "occluder_area": (0.05, 0.20),  # fraction of the UV face area
    "shadow_strength": (0.30, 0.70),  # brightness attenuation
}

# Evaluation
EVAL_DEFAULTS = {
    "n_test": 100,
    "seed": 99,
}

SECTIONS = {
    "face": FACE_DEFAULTS,
    "render": RENDER_DEFAULTS,
    "network": NETWORK_DEFAULTS,
    "loss": LOSS_DEFAULTS,
    "trainer": TRAINER_DEFAULTS,
    "synth": SYNTH_DEFAULTS,
    "eval": EVAL_DEFAULTS,
}

# Region items in makeup-loss order; their weights are lambda1..lambda3
REGION_ITEMS = ("lips", "eye", "face")
