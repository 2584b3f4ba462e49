"""
Shared fixtures for the Record Weaver tests
"""

import os
from pathlib import Path

import pytest
import torch
import yaml
from torch import nn

from connectors.toy_dataset import make_toy_dataset
from core.diff import gradient_check
from generators.schema_compiler import compile_schema, load_bundled_schema, parse_schema
from utils.config import RunConfig

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

SMALL_SCHEMA = """
message Small {
  optional float a = 1;
  optional float b = 2;
  optional string s = 3;
}
"""


def pytest_collection_modifyitems(config, items):
    if os.getenv("RECORD_WEAVER_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow; set RECORD_WEAVER_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def float64():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


@pytest.fixture(autouse=True)
def no_output_env(monkeypatch):
    monkeypatch.delenv("RECORD_WEAVER_OUTPUT_DIR", raising=False)


@pytest.fixture
def address_schema():
    return load_bundled_schema("address")


@pytest.fixture
def small_schema():
    return parse_schema(SMALL_SCHEMA)


@pytest.fixture
def small_plan(small_schema):
    return compile_schema(small_schema, latent_dim=3, state_dim=3)


@pytest.fixture(scope="session")
def toy_records():
    return make_toy_dataset(200, 10, seed=0)


@pytest.fixture
def small_records():
    return [
        {"a": 0.5, "b": -1.0, "s": "AB"},
        {"a": 1.5, "b": 0.0, "s": "BA"},
        {"a": -0.5, "b": 2.0, "s": "A"},
    ]


@pytest.fixture
def tiny_config(tmp_path):
    """Toy data and a tiny model that trains in seconds"""
    return RunConfig.model_validate({
        "seed": 3,
        "data": {"source": "toy", "toy": {"n_records": 200, "n_zips": 10}},
        "model": {"latent_dim": 4, "state_dim": 4, "max_len": 24},
        "train": {
            "steps": 10,
            "batch_size": 8,
            "warmup_steps": 5,
            "log_every": 5,
            "eval_every": 5,
            "eval_batch_size": 16,
            "generated_eval_size": 8,
        },
        "eval": {
            "n_generate": 20,
            "n_pvalue": 20,
            "n_levenshtein": 10,
            "repeat_rounds": 3,
            "repeat_size": 10,
            "interpolate_k": 5,
            "batch_size": 16,
        },
        "output": {"dir": str(tmp_path / "runs")},
    })


@pytest.fixture
def toy_run_config(tmp_path):
    """The shipped desk-scale toy config (1000 records, 10 zips, latent 32, 20k steps)"""
    data = yaml.safe_load((CONFIG_DIR / "toy.yaml").read_text())
    data["output"] = {"dir": str(tmp_path / "runs")}
    return RunConfig.model_validate(data)


@pytest.fixture
def toy_acceptance():
    """
    Floors for the desk-scale toy run

    loss_drop: fractional fall of the mean training loss from steps 100-199 to the last 100 steps.
    pvalue_gain: rise of the mean generated p-value over the untrained model.
    """
    return {"loss_drop": 0.30, "pvalue_gain": 0.10, "n_generated": 1000}


class _Bound(nn.Module):
    def __init__(self, module: nn.Module, fn):
        super().__init__()
        self.module = module
        self.fn = fn

    def forward(self):
        return self.fn(self.module)


def check_parameter_gradients(module, fn, keep=None):
    """
    gradcheck of fn(module) over the module's parameters

    Each parameter is swapped in through torch.func.functional_call, so fn can
    call any method of the module.
    """
    bound = _Bound(module, fn)
    params = {
        name: p.detach().clone().requires_grad_(True)
        for name, p in bound.named_parameters()
        if keep is None or keep(name)
    }
    names = list(params)

    def wrapped(*tensors):
        return torch.func.functional_call(bound, dict(zip(names, tensors)), ())

    return gradient_check(wrapped, [params[n] for n in names])
