"""Regenerates the STOI reference fixtures in this directory.

Requires numpy, scipy and pystoi 0.3.x. Signals are stored as 16-bit PCM
and scored after decoding (sample / 32768), exactly as the Rust tests read
them.
"""

import json
import os
import wave

import numpy as np
from pystoi import stoi
from pystoi.utils import resample_oct

HERE = os.path.dirname(os.path.abspath(__file__))


def to_pcm(x):
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)


def write(name, x, rate):
    pcm = to_pcm(x)
    with wave.open(os.path.join(HERE, name), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(pcm.tobytes())
    return pcm.astype(np.float64) / 32768.0


def speechlike(rng, n, rate, f0):
    t = np.arange(n) / rate
    x = sum(np.sin(2 * np.pi * f0 * k * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 15))
    # syllable-like envelope with silent gaps
    env = np.clip(np.sin(2 * np.pi * 2.5 * t), 0, None) ** 0.5
    return 0.3 * x * env / np.max(np.abs(x))


def main():
    rng = np.random.default_rng(20240611)
    cases = []

    def case(name, clean, est, rate):
        c = write(f"{name}_clean.wav", clean, rate)
        e = write(f"{name}_est.wav", est, rate)
        cases.append({"name": name, "rate": rate, "stoi": float(stoi(c, e, rate))})

    n = 32000
    clean = speechlike(rng, n, 16000, 130.0)
    white = rng.standard_normal(n)
    white *= np.sqrt(np.mean(clean ** 2) / np.mean(white ** 2))
    case("white_0db", clean, clean + white, 16000)
    case("white_m5db", clean, clean + white * 10 ** (5 / 20), 16000)

    b = np.ones(9) / 9.0
    case("smoothed", clean, np.convolve(clean, b, mode="same"), 16000)

    gain = 0.5 + 0.5 * np.abs(np.sin(np.linspace(0, 7, n)))
    case("gain_ripple", clean, clean * gain + 0.05 * white, 16000)

    n_odd = 23457
    clean_odd = speechlike(rng, n_odd, 16000, 210.0)
    babble = sum(
        np.sin(2 * np.pi * rng.uniform(100, 3000) * np.arange(n_odd) / 16000 + rng.uniform(0, 6.3))
        for _ in range(40)
    )
    babble *= np.sqrt(np.mean(clean_odd ** 2) / np.mean(babble ** 2)) * 0.7
    case("babble_odd_length", clean_odd, clean_odd + babble, 16000)

    n10 = 20000
    clean10 = speechlike(rng, n10, 10000, 160.0)
    noise10 = rng.standard_normal(n10) * 0.05
    case("native_10k", clean10, clean10 + noise10, 10000)

    probe = rng.standard_normal(1000) * 0.25
    resampled = resample_oct(probe, 10000, 16000)

    with open(os.path.join(HERE, "expected.json"), "w") as f:
        json.dump(
            {
                "cases": cases,
                "resample_probe": {"input": probe.tolist(), "output": resampled.tolist()},
            },
            f,
            indent=1,
        )


if __name__ == "__main__":
    main()
