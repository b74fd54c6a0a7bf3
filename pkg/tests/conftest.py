import json

import numpy as np
import pytest
import torch

from m2iosr.encoder import EncoderConfig
from m2iosr.trainer import build_model

torch.set_num_threads(1)


@pytest.fixture
def tiny_config():
    return EncoderConfig(input_shape=(1, 32, 32), stage_widths=(4, 4, 4, 4), latent_dim=8, num_known=3)


@pytest.fixture
def tiny_model(tiny_config):
    return build_model(tiny_config, seed=0, disc_hidden=16, adapter_channels=4)


def zero_final_layers(model):
    with torch.no_grad():
        for layer in (model.global_disc.final, *(d.final for d in model.local_discs.values())):
            layer.weight.zero_()
            layer.bias.zero_()


@pytest.fixture
def digits_csv(tmp_path):
    """scikit-learn's bundled 8x8 digits written as pixels-then-label CSV rows."""
    from sklearn.datasets import load_digits

    d = load_digits()
    pixels = d.images.reshape(len(d.images), -1) * (255.0 / 16.0)
    rows = np.column_stack([pixels.round(), d.target])
    path = tmp_path / "digits.csv"
    np.savetxt(path, rows, delimiter=",", fmt="%d")
    return path


@pytest.fixture
def run_config(tmp_path, digits_csv):
    """A small CLI run config over the digits CSV."""

    def make(out="run", **train_overrides):
        cfg = {
            "encoder": {"input_shape": [1, 32, 32], "stage_widths": [4, 8, 8, 8], "latent_dim": 8, "num_known": 6},
            "discriminator": {"hidden": 16, "adapter_channels": 4},
            "train": {"epochs": 1, "batch_size": 64, "seed": 3, **train_overrides},
            "split": {"dataset": "digits", "num_known": 6, "trial_seed": 1, "max_train_per_class": 30},
            "eval": {"tau": 0.5, "pool_sizes": [1, 2, 4]},
            "paths": {"data_dir": str(digits_csv), "data_format": "csv", "out_dir": str(tmp_path / out)},
        }
        path = tmp_path / f"{out}.json"
        path.write_text(json.dumps(cfg))
        return path

    return make
