# presets.py: default configs for every `weakprior` subcommand
# A user config JSON is merged over these; keys not listed here are rejected.
# Operator parameters follow the reference experiments where they are given
# (keep 30% of pixels, sigma = 0.01, SR x4 / x16, box 0.3-0.6, holdout ratios);
# everything else is a desk-scale synthetic substitute.

IMAGE_SHAPE = [16, 16, 3]

# Learning rate and holdout fraction per task.
TASK_TUNING = {
    "inpaint": {"lr": 0.02, "holdout": 0.10},   # 90% / 10%
    "box": {"lr": 0.02, "holdout": 0.10},
    "blur": {"lr": 0.02, "holdout": 0.20},      # 80% / 20%
    "sr": {"lr": 0.01, "holdout": 0.05},        # 95% / 5%
}

OPTIMIZER = {"lr": 0.02, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
             "retraction": "normalize", "radius": "init_norm"}

HOLDOUT = {"fraction": 0.1, "k": 5, "select": "latest", "seed": 0}

# Synthetic Gaussian-mixture image world shared by the image experiments.
WORLD = {
    "shape": IMAGE_SHAPE,
    "M": 4,
    "tau": 0.1,
    "separation": 0.05,
}

GENERATOR = {"T": 1000, "k": 3, "schedule": "linear"}


def tasks(*names):
    """Task specs for the image experiments, with their tuned lr / holdout."""
    specs = {
        "inpaint": {"keep_fraction": 0.3},
        "box": {"box_fraction": 0.25},
        "sr": {"factor": 4},
        "blur": {"kernel_size": 61, "intensity": 3.0},
    }
    return {name: dict(specs[name], **TASK_TUNING[name]) for name in names}


PRESETS = {
    "posterior": {
        "prior": {"weights": [0.5, 0.3, 0.2],
                  "means": [[-2.0, 0.0], [2.0, 0.0], [0.0, 2.5]],
                  "tau2": 0.25},
        "operator": {"kind": "random_dense", "m": 2, "n": 2, "seed": 3},
        "sigma": 0.3,
        "x_true": None,          # None: drawn from the prior
        "delta0": None,          # None: the observed gap
        "grid_tv": True,
    },
    "gap-stats": dict(WORLD, **{
        "images": 64,
        "keep_fraction": 0.3,
        "sigma": 0.01,
        "tau_norm": 0.1,         # tau used in the gap normalization
        "label": "gmm-world",
    }),
    "hoeffding": {
        "n": 64,
        "m": 32,
        "M": 2,
        "separation": 0.5,
        "sigma": 0.1,
        "tau": 0.1,
        "trials": 100_000,
        "support": 0.5,
        "j_star": 0,
    },
    "collapse-sweep": {
        "m_list": [8, 16, 32, 64, 128, 256, 512],
        "offset": 0.5,           # mu_1 = 0, mu_2 = offset * 1
        "weights": [0.7, 0.3],
        "sigma": 0.5,
        "tau": 0.5,
        "repeats": 64,
        "instances": 10_000,     # randomized identifiable instances checked against the bound
    },
    "consistency": {
        "operator": {"kind": "random_dense", "m": 2, "n": 2, "seed": 11},
        "sigma": 0.5,
        "x_star": [0.4, -0.2],
        "prior_a": {"weights": [0.6, 0.4], "means": [[0.0, 0.0], [3.0, 3.0]], "tau2": 1.0},
        "prior_b": {"weights": [0.5, 0.5], "means": [[-3.0, 2.0], [2.0, -3.0]], "tau2": 0.5},
        "n_list": [0, 1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096],
        "ball_radius": None,     # None: half the smallest inter-mean distance
        "replicates": 16,
        "samples": 100_000,
    },
    "solve": dict(WORLD, **{
        "generator": None,       # descriptor; None: built from the world
        "observation": None,     # {"y_file", "operator", "sigma"}; None: simulated
        "task": "inpaint",
        "task_params": {"keep_fraction": 0.3},
        "sigma": 0.01,
        "prior": "matched",      # matched | mismatched | shifted | hidden_shift
        "C": 4.0,
        "shift": 0.3,
        "generator_k": GENERATOR["k"],
        "T": GENERATOR["T"],
        "schedule": GENERATOR["schedule"],
        "optimizer": dict(OPTIMIZER),
        "holdout": dict(HOLDOUT),
        "iterations": 1000,
        "stopping": "holdout_topk",
        "optimizer_kind": "adam_sphere",
    }),
    "bench": dict(WORLD, **{
        "worlds": 20,
        "sigma": 0.01,
        "C": 4.0,
        "generator_k": GENERATOR["k"],
        "T": GENERATOR["T"],
        "schedule": GENERATOR["schedule"],
        "iterations": 300,
        "tasks": tasks("inpaint", "box", "sr", "blur"),
        "priors": ["matched", "mismatched", "dps"],
        "dps_zeta": 1.0,
        "dps_steps": 100,
        "holdout_k": 5,
    }),
    "failure-sweep": dict(WORLD, **{
        "worlds": 10,
        "sigma": 0.01,
        "generator_k": GENERATOR["k"],
        "T": GENERATOR["T"],
        "schedule": GENERATOR["schedule"],
        "iterations": 300,
        "box_fractions": [0.3, 0.4, 0.5, 0.6],
        "sr_levels": [{"factor": 4, "label": "x4-analog"}, {"factor": 8, "label": "x16-analog"}],
        "tuning": {"box": dict(TASK_TUNING["box"]), "sr": dict(TASK_TUNING["sr"])},
        "mismatch": "hidden_shift",   # hidden_shift | shifted | mismatched
        "C": 4.0,
        "shift": 0.2,
        "dps": True,
        "dps_zeta": 1.0,
        "dps_steps": 100,
        "gap_trials": 8,
        "holdout_k": 5,
    }),
    "ablation": dict(WORLD, **{
        "worlds": 5,
        "sigma": 0.01,
        "generator_k": GENERATOR["k"],
        "T": GENERATOR["T"],
        "schedule": GENERATOR["schedule"],
        "iterations": 500,
        "task": "inpaint",
        "task_params": {"keep_fraction": 0.3},
        "optimizers": ["adam", "adam_sphere"],
        "stopping": ["holdout_topk", "final"],
        "optimizer": dict(OPTIMIZER),
        "holdout": dict(HOLDOUT),
    }),
}

# Nested dicts whose keys are validated too.
NESTED = {"optimizer": OPTIMIZER, "holdout": HOLDOUT}
