"""Nine-PE waveform pre-processing chain: one source, seven in-memory array
transforms of uneven cost, and an IO-heavy sink that writes one file per
station.

Waveforms travel between PEs as plain float lists (broker-serializable) and
are lifted into numpy arrays inside each transform.  Given the same seed,
the sink files are byte-identical across runs and mappings.
"""

from __future__ import annotations

import hashlib
import os
import random

import numpy as np

from ..graph import Behavior, Connection, PESpec, WorkflowGraph
from . import WorkloadSpec, derive_seed

STATION_COUNT = 50
BASE_SAMPLES = 64


def seismic_inputs(spec: WorkloadSpec) -> dict[str, list[dict]]:
    n_samples = BASE_SAMPLES * spec.scale * (8 if spec.heavy else 1)
    records = []
    for s in range(STATION_COUNT):
        rng = random.Random(derive_seed(spec.seed, "station", s))
        records.append({
            "station": f"ST{s:03d}",
            "samples": [round(rng.gauss(0.0, 1.0), 6) for _ in range(n_samples)],
        })
    return {"read_waveform": records}


def _array_stage(pe_id: str, transform) -> Behavior:
    """Wrap an ndarray -> ndarray function as a list-in / list-out behavior."""

    def process(fields, state):
        wave = transform(np.asarray(fields["samples"], dtype=np.float64))
        return [("out", {"station": fields["station"], "samples": wave.tolist()})]

    return Behavior(process)


def build_seismic(spec: WorkloadSpec, out_dir: str) -> WorkflowGraph:
    def read_waveform(fields, state):
        return [("out", dict(fields))]

    def decode_block(wave: np.ndarray) -> np.ndarray:
        # Counts-to-velocity style rescale.
        return wave * 1.25e-3

    def detrend(wave: np.ndarray) -> np.ndarray:
        x = np.arange(wave.size, dtype=np.float64)
        slope, intercept = np.polyfit(x, wave, 1)
        return wave - (slope * x + intercept)

    def demean(wave: np.ndarray) -> np.ndarray:
        return wave - wave.mean()

    def taper(wave: np.ndarray) -> np.ndarray:
        return wave * np.hanning(wave.size)

    def bandpass(wave: np.ndarray) -> np.ndarray:
        # Crude band limit: drop the lowest and highest FFT bins.
        spectrum = np.fft.rfft(wave)
        lo, hi = max(1, spectrum.size // 16), spectrum.size * 7 // 8
        mask = np.zeros_like(spectrum)
        mask[lo:hi] = 1.0
        return np.fft.irfft(spectrum * mask, n=wave.size)

    def normalize(wave: np.ndarray) -> np.ndarray:
        peak = np.abs(wave).max()
        return wave / peak if peak > 0 else wave

    def whiten(wave: np.ndarray) -> np.ndarray:
        spectrum = np.fft.rfft(wave)
        mag = np.abs(spectrum)
        safe = np.where(mag > 1e-12, mag, 1.0)
        flat = np.where(mag > 1e-12, spectrum / safe, 0.0)
        return np.fft.irfft(flat, n=wave.size)

    def write_disk(fields, state):
        payload = "\n".join(f"{v:.9e}" for v in fields["samples"]).encode("ascii")
        filename = f"{fields['station']}.txt"
        with open(os.path.join(out_dir, filename), "wb") as fh:
            fh.write(payload)
        # The emitted record carries the relative name only, so sink outputs
        # compare equal across runs that use different output directories.
        return [(None, {
            "station": fields["station"],
            "file": filename,
            "sha256": hashlib.sha256(payload).hexdigest(),
        })]

    stages = [
        ("decode_block", decode_block),
        ("detrend", detrend),
        ("demean", demean),
        ("taper", taper),
        ("bandpass", bandpass),
        ("normalize", normalize),
        ("whiten", whiten),
    ]
    pes = [PESpec("read_waveform", "source", Behavior(read_waveform), output_ports=("out",))]
    pes += [PESpec(pe_id, "transform", _array_stage(pe_id, fn), ("in",), ("out",))
            for pe_id, fn in stages]
    pes.append(PESpec("write_disk", "sink", Behavior(write_disk), ("in",)))

    chain = ["read_waveform"] + [pe_id for pe_id, _ in stages] + ["write_disk"]
    connections = [Connection(a, "out", b, "in") for a, b in zip(chain, chain[1:])]
    return WorkflowGraph(pes, connections)
