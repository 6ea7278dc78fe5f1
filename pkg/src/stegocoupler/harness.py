"""Measurement harness: per-trial encode/decode runs with a white-box
security audit, plus aggregate reports for divergence, error rate,
efficiency, and speed.

Every trial samples a fresh message and key, encrypts, encodes while
auditing each step's induced stegotoken distribution against the channel
conditional, decodes with an independently built channel, and diffs the
recovered bits. Failed trials (codec or channel errors) are recorded, not
raised, so sweeps always complete.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channels import ChannelSpec
from .cipher import encrypt, gen_key
from .codec import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_THRESHOLD,
    StepRecord,
    decode,
    encode,
    stego_marginal,
)
from .coupling import SparseCoupling
from .errors import KlUndefinedError, StegoError
from .probability import Categorical, Rng, entropy, kl


@dataclass(frozen=True)
class TrialConfig:
    """One experiment configuration; defaults follow the reference protocol
    (80-bit ciphertexts, 10-bit blocks, 0.1-bit threshold)."""

    channel: ChannelSpec
    block_bits: int = 10
    threshold: float = DEFAULT_THRESHOLD
    bit_length: int = 80
    min_tokens: int = 0
    max_tokens: int = DEFAULT_MAX_TOKENS


@dataclass
class TrialReport:
    """Metrics from a single encode/decode round trip."""

    seed: int
    channel: dict
    block_bits: int
    threshold: float
    bit_length: int
    tokens_total: int = 0
    tokens_coupling: int = 0
    bit_errors: int | None = None
    decoded_ok: bool = False
    failed: bool = False
    failure: str | None = None
    step_kl_bits: list[float] = field(default_factory=list)
    step_channel_entropy_bits: list[float] = field(default_factory=list)
    residual_entropies: list[float] = field(default_factory=list)
    encode_coupling_seconds: list[float] = field(default_factory=list)
    encode_channel_seconds: list[float] = field(default_factory=list)
    decode_coupling_seconds: list[float] = field(default_factory=list)
    decode_channel_seconds: list[float] = field(default_factory=list)

    _TIMING_FIELDS = (
        "encode_coupling_seconds", "encode_channel_seconds",
        "decode_coupling_seconds", "decode_channel_seconds",
    )

    def max_kl(self) -> float:
        return max(self.step_kl_bits) if self.step_kl_bits else 0.0

    def bit_rate(self) -> float | None:
        """Ciphertext bits per coupling-phase token; None when undefined."""
        if self.failed or self.tokens_coupling == 0:
            return None
        return self.bit_length / self.tokens_coupling

    def mean_channel_entropy(self) -> float | None:
        if not self.step_channel_entropy_bits:
            return None
        return float(np.mean(self.step_channel_entropy_bits))

    def efficiency(self) -> float | None:
        rate = self.bit_rate()
        h = self.mean_channel_entropy()
        if rate is None or h is None or h <= 0.0:
            return None
        return rate / h

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "seed", "channel", "block_bits", "threshold", "bit_length",
            "tokens_total", "tokens_coupling", "bit_errors", "decoded_ok",
            "failed", "failure", "step_kl_bits", "step_channel_entropy_bits",
            "residual_entropies",
        )}
        out.update({k: getattr(self, k) for k in self._TIMING_FIELDS})
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TrialReport":
        return cls(**obj)

    def deterministic_json(self) -> str:
        """Canonical JSON of everything except wall-clock measurements."""
        out = self.to_json()
        for k in self._TIMING_FIELDS:
            out.pop(k)
        return json.dumps(out, sort_keys=True)


def audit_step_kl(channel_dist: Categorical, coupling: SparseCoupling,
                  posterior: Categorical | None = None) -> float:
    """Per-token security audit in bits: KL(covertext || induced stegotoken).

    Covertext tokens with zero induced mass yield +inf rather than an error.
    """
    if posterior is None:
        posterior = coupling.left_marginal
    induced = stego_marginal(posterior, coupling)
    try:
        return kl(channel_dist, induced)
    except KlUndefinedError:
        return math.inf


def run_trial(config: TrialConfig, seed: int) -> TrialReport:
    """Run one full trial; codec and channel failures become a failed record."""
    report = TrialReport(
        seed=int(seed), channel=config.channel.to_json(),
        block_bits=config.block_bits, threshold=config.threshold,
        bit_length=config.bit_length,
    )
    root = Rng(seed)
    message_bits = root.derive(0).next_bits(config.bit_length)
    key = gen_key(config.bit_length, root.derive(1))
    ciphertext = encrypt(message_bits, key, block_bits=config.block_bits)

    def on_encode_step(rec: StepRecord) -> None:
        report.step_kl_bits.append(audit_step_kl(rec.channel_dist, rec.coupling))
        report.step_channel_entropy_bits.append(entropy(rec.channel_dist))
        report.encode_coupling_seconds.append(rec.coupling_seconds)
        report.encode_channel_seconds.append(rec.channel_seconds)

    def on_decode_step(rec: StepRecord) -> None:
        report.decode_coupling_seconds.append(rec.coupling_seconds)
        report.decode_channel_seconds.append(rec.channel_seconds)

    try:
        tokens = encode(
            ciphertext, config.channel.build(), root.derive(2),
            threshold=config.threshold, min_tokens=config.min_tokens,
            max_tokens=config.max_tokens, observer=on_encode_step,
        )
        report.tokens_total = len(tokens)
        report.tokens_coupling = len(report.step_kl_bits)
        result = decode(
            tokens, config.channel.build(), block_bits=config.block_bits,
            n_blocks=ciphertext.n_blocks, threshold=config.threshold,
            bit_length=config.bit_length, observer=on_decode_step,
        )
    except StegoError as exc:
        report.failed = True
        report.failure = exc.code
        report.tokens_coupling = len(report.step_kl_bits)
        return report
    report.residual_entropies = [float(h) for h in result.residual_entropies]
    report.bit_errors = int(np.sum(result.bits != ciphertext.bits))
    report.decoded_ok = report.bit_errors == 0
    return report


def trial_seed(base_seed: int, index: int) -> int:
    """Deterministic per-trial seed derivation."""
    return Rng(base_seed).derive(index).seed


def _trial_task(args: tuple[TrialConfig, int]) -> TrialReport:
    return run_trial(*args)


def run_trials(config: TrialConfig, n_trials: int, base_seed: int,
               n_jobs: int = 1) -> list[TrialReport]:
    """Run ``n_trials`` independent trials with derived seeds.

    With ``n_jobs`` > 1 trials run in worker processes; each worker owns its
    channel instances and random streams, so results are identical to the
    sequential order.
    """
    tasks = [(config, trial_seed(base_seed, i)) for i in range(n_trials)]
    if n_jobs <= 1:
        return [run_trial(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        chunk = max(1, n_trials // (8 * n_jobs))
        return list(pool.map(_trial_task, tasks, chunksize=chunk))


@dataclass
class Estimate:
    """Mean with a CLT-based 95% confidence halfwidth."""

    mean: float
    ci95: float | None
    n: int

    def to_json(self) -> dict:
        return {"mean": self.mean, "ci95": self.ci95, "n": self.n}


def _estimate(values: list[float]) -> Estimate | None:
    if not values:
        return None
    mean = float(np.mean(values))
    if len(values) < 2:
        return Estimate(mean, None, len(values))
    half = 1.96 * statistics.stdev(values) / math.sqrt(len(values))
    return Estimate(mean, float(half), len(values))


@dataclass
class SummaryReport:
    """Aggregate over a set of trial reports; a pure function of them."""

    trials: int
    failures: int
    bit_rate: Estimate | None
    efficiency: Estimate | None
    max_kl: Estimate | None
    global_max_kl: float
    error_rate_per_bit: Estimate | None
    encode_seconds_per_token: Estimate | None
    decode_seconds_per_token: Estimate | None

    def to_json(self) -> dict:
        def dump(v):
            return v.to_json() if isinstance(v, Estimate) else v

        return {
            "trials": self.trials,
            "failures": self.failures,
            "bit_rate": dump(self.bit_rate),
            "efficiency": dump(self.efficiency),
            "max_kl": dump(self.max_kl),
            "global_max_kl": self.global_max_kl,
            "error_rate_per_bit": dump(self.error_rate_per_bit),
            "encode_seconds_per_token": dump(self.encode_seconds_per_token),
            "decode_seconds_per_token": dump(self.decode_seconds_per_token),
        }


def summarize(reports: list[TrialReport]) -> SummaryReport:
    """Aggregate trial reports. Failed trials count toward ``failures`` and
    are excluded from rate statistics."""
    ok = [r for r in reports if not r.failed]
    rates = [r.bit_rate() for r in ok if r.bit_rate() is not None]
    effs = [r.efficiency() for r in ok if r.efficiency() is not None]
    maxes = [r.max_kl() for r in reports if r.step_kl_bits]
    total_bits = sum(r.bit_length for r in ok)
    total_errors = sum(r.bit_errors for r in ok if r.bit_errors is not None)
    if total_bits > 0:
        p = total_errors / total_bits
        err = Estimate(p, 1.96 * math.sqrt(p * (1.0 - p) / total_bits), total_bits)
    else:
        err = None
    enc = [s for r in ok for s in r.encode_coupling_seconds]
    dec = [s for r in ok for s in r.decode_coupling_seconds]
    return SummaryReport(
        trials=len(reports),
        failures=len(reports) - len(ok),
        bit_rate=_estimate(rates) or Estimate(0.0, None, 0),
        efficiency=_estimate(effs),
        max_kl=_estimate(maxes),
        global_max_kl=max(maxes) if maxes else 0.0,
        error_rate_per_bit=err,
        encode_seconds_per_token=_estimate(enc),
        decode_seconds_per_token=_estimate(dec),
    )


def kl_report(config: TrialConfig, n_trials: int, base_seed: int,
              n_jobs: int = 1) -> dict:
    """Max/mean per-step KL between induced stegotoken and channel
    conditional, across all coupling steps of all trials."""
    reports = run_trials(config, n_trials, base_seed, n_jobs)
    steps = [v for r in reports for v in r.step_kl_bits]
    return {
        "trials": n_trials,
        "failures": sum(r.failed for r in reports),
        "steps": len(steps),
        "max_kl_bits": max(steps) if steps else 0.0,
        "mean_kl_bits": float(np.mean(steps)) if steps else 0.0,
    }


def sampled_token_kl(channel_dist: Categorical, tokens) -> float:
    """Sample-based audit for i.i.d. channels: KL(channel || empirical token
    frequencies) in bits; +inf if some channel token was never emitted."""
    counts = np.zeros(len(channel_dist))
    for t in tokens:
        pos = channel_dist.index_of(int(t))
        if pos < 0:
            return math.inf
        counts[pos] += 1.0
    if counts.min() <= 0.0:
        return math.inf
    empirical = Categorical(channel_dist.ids, counts)
    return kl(channel_dist, empirical)


def threshold_sweep(config: TrialConfig, thresholds: list[float],
                    n_trials: int, base_seed: int, n_jobs: int = 1) -> list[dict]:
    """Error rate per threshold; thresholds must be strictly descending.

    Error rate is non-increasing as the threshold decreases, up to CI
    overlap.
    """
    if any(b >= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly descending")
    rows = []
    for pos, tau in enumerate(thresholds):
        cfg = TrialConfig(
            channel=config.channel, block_bits=config.block_bits,
            threshold=tau, bit_length=config.bit_length,
            min_tokens=config.min_tokens, max_tokens=config.max_tokens,
        )
        reports = run_trials(cfg, n_trials, trial_seed(base_seed, 7_000 + pos),
                             n_jobs)
        ok = [r for r in reports if not r.failed]
        bits = sum(r.bit_length for r in ok)
        errors = sum(r.bit_errors for r in ok)
        rate = errors / bits if bits else 0.0
        ci = 1.96 * math.sqrt(rate * (1.0 - rate) / bits) if bits else 0.0
        rows.append({
            "threshold": tau,
            "error_rate": rate,
            "ci95": ci,
            "bits": bits,
            "errors": errors,
            "trials": len(reports),
            "failures": len(reports) - len(ok),
        })
    return rows


def efficiency_report(config: TrialConfig, n_trials: int, base_seed: int,
                      n_jobs: int = 1) -> SummaryReport:
    return summarize(run_trials(config, n_trials, base_seed, n_jobs))


def speed_report(config: TrialConfig, n_trials: int, base_seed: int,
                 n_jobs: int = 1) -> dict:
    """Coupling seconds per token for encode and decode, channel-query time
    excluded. Absolute values are hardware-bound; medians are for scaling
    comparisons only."""
    reports = run_trials(config, n_trials, base_seed, n_jobs)
    enc = [s for r in reports for s in r.encode_coupling_seconds]
    dec = [s for r in reports for s in r.decode_coupling_seconds]
    chan = [s for r in reports
            for s in r.encode_channel_seconds + r.decode_channel_seconds]
    return {
        "trials": n_trials,
        "coupling_steps": len(enc),
        "encode_median_seconds_per_token": float(np.median(enc)) if enc else 0.0,
        "decode_median_seconds_per_token": float(np.median(dec)) if dec else 0.0,
        "encode_mean_seconds_per_token": float(np.mean(enc)) if enc else 0.0,
        "decode_mean_seconds_per_token": float(np.mean(dec)) if dec else 0.0,
        "channel_mean_seconds_per_query": float(np.mean(chan)) if chan else 0.0,
    }


def write_trial_reports(path, reports: list[TrialReport]) -> None:
    """One JSON object per line."""
    with open(path, "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_json()) + "\n")


def load_trial_reports(path) -> list[TrialReport]:
    reports = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            reports.append(TrialReport.from_json(json.loads(line)))
    return reports


def export_sweep_csv(rows: list[dict], path) -> None:
    """Plot-ready CSV: threshold, error_rate, ci."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "error_rate", "ci95"])
        for row in rows:
            writer.writerow([row["threshold"], row["error_rate"], row["ci95"]])
