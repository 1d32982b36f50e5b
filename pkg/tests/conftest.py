import numpy as np
import pytest

from mtms.corpus import NOISE_KINDS, mix_at_snr, split_noise, synth_noise, synth_speech, tile_noise
from mtms.spectral import Waveform


def make_mixtures(n, snr_db, segment, seed, duration=3.0, noise_dur=60.0):
    """(clean, scaled_noise, noisy) triples from synthetic speech and the given noise segment."""
    rng = np.random.default_rng(seed)
    noises = {k: split_noise(Waveform(synth_noise(k, noise_dur, np.random.default_rng(100 + i))))[segment]
              for i, k in enumerate(NOISE_KINDS)}
    out = []
    for i in range(n):
        s = Waveform(0.5 * synth_speech(duration, rng))
        seg = noises[NOISE_KINDS[i % len(NOISE_KINDS)]].samples
        nz = Waveform(tile_noise(seg, len(s), int(rng.integers(seg.size))))
        snr = snr_db(rng) if callable(snr_db) else snr_db
        m = mix_at_snr(s, nz, snr)
        out.append((s, m.scaled_noise, m.noisy))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria: one summary line per criterion at the end of the run
CRITERIA: dict[str, list] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    CRITERIA[f"{number:02d}"] = [title, ok, detail]
    print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")


def pytest_runtest_logreport(report):
    # a criterion that raised before recording still gets a FAIL line
    if report.when == "call" and "test_acceptance" in report.nodeid and "test_criterion_" in report.nodeid:
        num = report.nodeid.split("test_criterion_")[1][:2]
        if report.failed and (num not in CRITERIA or CRITERIA[num][1]):
            title = CRITERIA.get(num, ["(no result recorded)"])[0]
            CRITERIA[num] = [title, False, "test raised: " + str(report.longrepr).splitlines()[-1][:160]]


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(CRITERIA):
        title, ok, detail = CRITERIA[num]
        terminalreporter.write_line(f"criterion {int(num):2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
