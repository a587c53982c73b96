import json
from pathlib import Path

import pytest

from uvforge.generator import ToyGenerator
from uvforge.io import write_direction, write_femb
from uvforge.latent import AttributeDirection
from uvforge.metrics import PixelStatExtractor

TOY = {"kind": "Toy", "latent_dim": 32, "texture_size": [64, 64], "seed": 0}


def make_run_config(root: Path, n=20, latent_dim=32, texture_size=64, **overrides):
    """A complete toy pipeline config plus the files it references."""
    generator = {"kind": "Toy", "latent_dim": latent_dim, "texture_size": [texture_size, texture_size], "seed": 0}
    gen = ToyGenerator(latent_dim=latent_dim, texture_size=(texture_size, texture_size), seed=0)
    write_direction(root / "beard.dir.json", AttributeDirection(gen.attribute_axis("beard"), 0.0, "beard"))
    ref = PixelStatExtractor().transform([r.texture for r in gen.sample_batch(30, 1234)])
    write_femb(root / "ref.femb", ref, [f"ref{i}" for i in range(len(ref))])
    cfg = {
        "seed": 11,
        "n": n,
        "base_model_id": "ped-base-01",
        "output_dir": "out",
        "generator": generator,
        "w_mean": {"n": 500, "seed": 3},
        "truncation_psi": 0.7,
        "edits": [{"attribute": "beard", "direction": "beard.dir.json", "alpha_max": 2.0}],
        "qa": {
            "tint": {"synthetic": {"n": 80, "seed": 21}},
            "anomaly": {"mahalanobis": {"n_reference": 200, "seed": 22}},
        },
        "metrics": {"reference": "ref.femb", "fid": True, "kid": True, "pr": True, "k": 3, "blocks": 2, "seed": 1},
        "render": {"seed": 5, "image_size": [32, 32]},
    }
    cfg.update(overrides)
    path = root / "run.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path


@pytest.fixture
def run_config(tmp_path):
    return make_run_config(tmp_path)
