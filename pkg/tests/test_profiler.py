"""Tests for closed-form cost accounting."""

import numpy as np
import pytest

from slimvc.channels import MODULES, LayerKind, LayerSpec, build_channel_table
from slimvc.errors import ShapeError, UsageError
from slimvc.ops import same_padding
from slimvc.profiler import (
    CSV_HEADER,
    DECODE_MODULES,
    ENCODE_MODULES,
    bench_latency,
    count_macs,
    count_params,
    cost_report,
    encode_ratio,
    layer_macs,
    memory_report,
    parse_resolution,
    report_csv,
    report_table,
)
from slimvc.slim import SlimConv, SwitchableGDN
from slimvc.tensor import Tensor

from oracles import conv2d_loop, transposed_conv2d_loop

MODULE_INPUT = {"fe": 48, "fd": 4, "he": 4, "hd": 1, "tpm": 4, "epm": 4}


@pytest.fixture(scope="module")
def paper():
    return build_channel_table("paper")


@pytest.fixture(scope="module")
def paper_report():
    return cost_report("paper", 1920, 1080)


def test_full_width_parameter_counts(paper):
    expected = {
        "fe": 2_001_024,
        "fd": 2_001_024,
        "he": 4_161_536,
        "hd": 4_751_360,
        "tpm": 16_249_250,
        "epm": 4_587_520,
    }
    assert {m: count_params(paper, m, 4) for m in MODULES} == expected
    assert count_params(paper, "fe", 4) == 9 * 9 * 3 * 192 + 2 * (5 * 5 * 192 * 192) + 3 * (192**2 + 192)


def test_full_width_mac_counts(paper):
    assert count_macs(paper, "tpm", 4, 1080, 1920) == 233_989_200_000
    assert count_macs(paper, "epm", 4, 1080, 1920) == 66_060_288_000
    assert count_macs(paper, "fe", 4, 1080, 1920) == 88_368_537_600
    assert count_macs(paper, "tpm", 4, 1080, 1920) / 1e9 == pytest.approx(232.5, rel=0.01)
    assert count_macs(paper, "fe", 4, 1080, 1920) / 1e9 == pytest.approx(90, rel=0.05)


def test_counts_grow_with_width(paper_report):
    for module in MODULES:
        params = [paper_report.row(module, k).params for k in range(5)]
        macs = [paper_report.row(module, k).macs_encode + paper_report.row(module, k).macs_decode
                for k in range(5)]
        assert params == sorted(set(params))
        assert macs == sorted(set(macs))


def test_encode_ratio_and_totals(paper_report):
    assert encode_ratio(paper_report) <= 0.17
    for k in range(5):
        rows = paper_report.for_width(k)
        assert paper_report.total_params(k) == sum(r.params for r in rows)
        assert paper_report.total_macs_encode(k) == sum(
            r.macs_encode for r in rows if r.module in ENCODE_MODULES)
    assert paper_report.row("fd", 4).macs_encode == 0
    assert paper_report.row("fe", 4).macs_decode == 0
    assert set(DECODE_MODULES) < set(MODULES)


def test_memory_report(paper):
    full = memory_report(paper, 4)
    assert full.largest == "tpm"
    assert full.total == 4 * sum(count_params(paper, m, 4) for m in MODULES)
    totals = [memory_report(paper, k).total for k in range(5)]
    assert totals == sorted(set(totals))


def test_layer_macs_match_loop_trip_counts(rng):
    conv = LayerSpec(LayerKind.CONV, (1, 2), (2, 3), 5, 2)
    deconv = LayerSpec(LayerKind.DECONV, (1, 2), (2, 3), 5, 2)
    for k in (0, 1):
        cin, cout = conv.channels(k)
        x = rng.standard_normal((1, cin, 12, 10)).astype(np.float32)
        padding = (*same_padding(5, 2, 12), *same_padding(5, 2, 10))
        out, trips = conv2d_loop(x, rng.standard_normal((cout, cin, 5, 5)).astype(np.float32),
                                 stride=2, padding=padding)
        assert layer_macs(conv, k, 12, 10) == (trips, *out.shape[2:])

        x = rng.standard_normal((1, cin, 3, 4)).astype(np.float32)
        out, trips = transposed_conv2d_loop(x, rng.standard_normal((cin, cout, 5, 5)).astype(np.float32),
                                            stride=2, padding=(1, 2, 1, 2))
        assert layer_macs(deconv, k, 3, 4) == (trips, *out.shape[2:])


def test_module_macs_match_running_shapes(desk_model, rng):
    for module in MODULES:
        stack = desk_model.module(module)
        for k in range(desk_model.widths):
            size = MODULE_INPUT[module]
            x = Tensor(rng.uniform(-1, 1, size=(1, stack.in_channels(k), size, size)).astype(np.float32))
            total = 0
            for layer in stack:
                y = layer(x, k)
                if isinstance(layer, SlimConv):
                    weight, _ = layer.slice_weights(k)
                    positions = x.shape[2] * x.shape[3] if layer.transposed else y.shape[2] * y.shape[3]
                    total += positions * weight.data.size
                elif isinstance(layer, SwitchableGDN):
                    channels = x.shape[1]
                    total += x.shape[2] * x.shape[3] * (channels * channels + 2 * channels)
                x = y
            assert count_macs(desk_model.table, module, k, 48, 48) == total, (module, k)


def test_invalid_inputs(paper):
    with pytest.raises(ShapeError, match="multiple"):
        count_macs(paper, "fe", 4, 1080, 1921)
    with pytest.raises(ShapeError):
        count_params(paper, "fe", 5)
    assert parse_resolution("1920x1080") == (1920, 1080)
    for text in ("1920", "axb", "0x48"):
        with pytest.raises(UsageError):
            parse_resolution(text)


def test_report_rendering():
    report = cost_report("desk", 96, 48)
    lines = report_csv(report).splitlines()
    assert lines[0] == ",".join(CSV_HEADER) == "module,width_factor,params,param_bytes,macs_encode,macs_decode"
    assert len(lines) == 1 + 5 * len(MODULES)
    assert lines[1].startswith("fe,0.25,")
    table = report_table(report)
    assert "SlimTPM" in table and "encode MACs ratio" in table


def test_latency_benchmark(desk_model):
    report = bench_latency(desk_model, 0, frames=2, warmup=1)
    assert report.encode_seconds > 0 and report.decode_seconds > 0
    assert report.macs_encode == sum(count_macs(desk_model.table, m, 0, 48, 48) for m in ENCODE_MODULES)
    with pytest.raises(UsageError):
        bench_latency(desk_model, 0, frames=0)


def test_narrowest_width_codes_fastest(desk_model):
    narrow = bench_latency(desk_model, 0, frames=3, resolution=(96, 96), warmup=1)
    wide = bench_latency(desk_model, 4, frames=3, resolution=(96, 96), warmup=1)
    assert narrow.macs_encode < wide.macs_encode
    assert narrow.encode_seconds < wide.encode_seconds
    assert narrow.decode_seconds < wide.decode_seconds
