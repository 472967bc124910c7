import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from samdaq.config import Config  # noqa: E402
from samdaq.data import synth_dataset  # noqa: E402


def tiny_config(**overrides) -> Config:
    """16x16 input, narrow widths, 64-bit: fast enough for oracle and gradient checks."""
    base = dict(
        input_size=16, stage_channels=(4, 8, 12, 16), stage_heads=(1, 1, 1, 1),
        fpn_width=8, adapter_rank=2, num_frame_queries=3, num_video_queries=2,
        query_hidden_dim=8, clip_length=3, float64=True, lora_rank=2, lora_alpha=4.0,
    )
    base.update(overrides)
    return Config(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    synth_dataset(root, seed=3, videos=2, frames=5, size=32)
    return root


def randomize_trainable(model, seed=0, scale=0.3):
    """Give every trainable tensor generic non-zero values (zero-init parts included)."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            if p.requires_grad:
                p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return model


# --------------------------------------------------------------------------- end-to-end smoke model


@pytest.fixture(scope="session")
def smoke_data(tmp_path_factory):
    """The seed-fixed 5-video synthetic set used by the learning smoke test."""
    from samdaq.config import preset

    size = preset("smoke").input_size
    root = tmp_path_factory.mktemp("smoke_data")
    synth_dataset(root, seed=0, videos=5, frames=10, size=size)
    return root


@pytest.fixture(scope="session")
def smoke_run(smoke_data, tmp_path_factory):
    """A model trained with the ``smoke`` preset (trained once per session)."""
    import time

    from samdaq.config import preset
    from samdaq.data import load_video_dataset
    from samdaq.train import train

    cfg = preset("smoke", data_root=str(smoke_data))
    out = tmp_path_factory.mktemp("smoke_run")
    start = time.perf_counter()
    result = train(cfg, load_video_dataset(smoke_data, cfg.input_size), out)
    result.seconds = time.perf_counter() - start
    return result


# --------------------------------------------------------------------------- acceptance report

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    if report.when == "setup" and report.passed:
        return
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    _ACCEPTANCE[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[number]
        line = f"[{status}] {number}. {title}"
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))
