import pytest

from mtms.config import preset
from mtms.corpus import CorpusSpec, MixingPlan, build_manifest, synth_corpus
from mtms.model import MTMSNet
from mtms.pipeline import evaluate, realize_all, report_text, stats_from_mixtures, summarize


@pytest.fixture(scope="module")
def setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    synth_corpus(root, CorpusSpec(10, 3, 1.5, 6.0, seed=2))
    recs = build_manifest(root, MixingPlan(), seed=3)
    train = realize_all([r for r in recs if r.split == "train"], root)
    test = realize_all([r for r in recs if r.split == "test"], root)
    return MTMSNet(preset("toy"), seed=1), stats_from_mixtures(train), test


def test_thread_count_does_not_change_report(setup):
    net, stats, test = setup
    one = report_text(evaluate(test, net, stats, ("irm", "fused"), threads=1))
    three = report_text(evaluate(test, net, stats, ("irm", "fused"), threads=3))
    assert one == three


def test_threads_from_environment(setup, monkeypatch):
    from mtms.pipeline import evaluation_threads
    monkeypatch.setenv("MTMS_THREADS", "2")
    assert evaluation_threads() == 2
    monkeypatch.delenv("MTMS_THREADS")
    assert evaluation_threads() >= 1


def test_summary_means(setup):
    net, stats, test = setup
    rows = evaluate(test, net, stats, ("irm",), threads=1)
    summ = summarize(rows)
    assert {m for _, m, *_ in summ} == {"noisy", "irm"}
    assert sum(n for _, m, n, *_ in summ if m == "irm") == len(test)
