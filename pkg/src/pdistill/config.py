"""Flat key=value run configuration.

Precedence: CLI flags > config file > defaults. The file format is one
`key = value` per line; blank lines and #-comments are ignored. Values are
parsed to the type of the default (ints, floats, bools, comma lists).
"""

DEFAULTS = {
    # corpus
    "corpus_clips": 256,
    "corpus_phones": 5,
    "corpus_speakers": 2,
    "sample_rate": 4000,
    "clip_length": 2048,
    "frame_rate_divisor": 32,
    # teacher
    "teacher_stacks": 2,
    "teacher_layers_per_stack": 5,
    "teacher_filter_size": 3,
    "teacher_residual_channels": 32,
    "teacher_gate_channels": 32,
    "teacher_skip_channels": 32,
    "teacher_mixtures": 10,
    "teacher_steps": 20000,
    "teacher_batch": 4,
    "teacher_lr": 2e-4,
    "crop_length": 1024,
    # classifier
    "classifier_steps": 1500,
    "classifier_batch": 8,
    "classifier_lr": 1e-3,
    # student / distillation
    "student_flow_layers": [4, 4, 4, 8],
    "student_filter_size": 3,
    "student_hidden_channels": 16,
    "distill_steps": 20000,
    "distill_batch": 3,
    "distill_crop_length": 768,
    "distill_lr": 5e-4,
    "inner_samples": 16,
    "lambda_power": 1.0,
    "lambda_perceptual": 1.0,
    "gamma": 0.3,
    "perceptual_mode": "gram",
    "preset": "kl_power",
    # misc
    "checkpoint_every": 5000,
    "stft_window": 256,
    "stft_hop": 64,
    "sample_clips": 2,
    "sample_length": 2048,
}

# cumulative ablation rows
PRESETS = {
    "kl_power": {"lambda_power": None, "lambda_perceptual": 0.0, "use_contrastive": False},
    "kl_power_perceptual": {"lambda_power": None, "lambda_perceptual": None,
                            "use_contrastive": False},
    "kl_power_perceptual_contrastive": {"lambda_power": None, "lambda_perceptual": None,
                                        "use_contrastive": True},
}


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        return [int(v) for v in raw.split(",") if v.strip()]
    return raw


def load_config(path=None, overrides=None) -> dict:
    """Merge defaults, an optional config file, and CLI overrides."""
    cfg = dict(DEFAULTS)
    if path is not None:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key = value")
                key, raw = (s.strip() for s in line.split("=", 1))
                if key not in cfg:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                cfg[key] = _parse_value(raw, DEFAULTS[key])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in cfg:
            raise ValueError(f"unknown config key {key!r}")
        cfg[key] = value
    return cfg


def apply_preset(cfg: dict, distill_cfg_kwargs: dict) -> dict:
    """Fill DistillConfig kwargs from the preset name; None means keep cfg value."""
    name = cfg["preset"]
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    out = dict(distill_cfg_kwargs)
    for key, forced in PRESETS[name].items():
        if key == "lambda_power":
            out["lambda_power"] = cfg["lambda_power"] if forced is None else forced
        elif key == "lambda_perceptual":
            out["lambda_perceptual"] = cfg["lambda_perceptual"] if forced is None else forced
        elif key == "use_contrastive":
            out["use_contrastive"] = forced
    return out
