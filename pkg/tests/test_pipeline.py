import json
import logging
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthasr import dsp
from synthasr.cli import main
from synthasr.pipeline import toy
from synthasr.pipeline.config import ConfigError, config_from_dict, load_config
from synthasr.pipeline.experiment import pearson, select_lm_weight
from synthasr.pipeline.features import augment_features
from synthasr.pipeline.manifest import CorpusManifest, ManifestError, Record, ingest, load_manifest
from synthasr.pipeline.mixing import MixPlan, MixPolicy, build_training_mix
from synthasr.pipeline.parallel import parallel_map, worker_count
from synthasr.pipeline.report import COLUMNS, HEADER, ReportRow, from_csv, to_csv, to_table, write_report


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    return toy.write_toy_corpus(root, seed=5, splits={"train": 6, "dev-clean": 2}, n_text_only=4)


def header_duration(path):
    """Duration from the RIFF chunks, parsed by hand."""
    data = open(path, "rb").read()
    assert data[:4] == b"RIFF" and data[8:12] == b"WAVE"
    pos, rate, block, n_bytes = 12, None, None, None
    while pos < len(data):
        cid, size = data[pos:pos + 4], struct.unpack("<I", data[pos + 4:pos + 8])[0]
        if cid == b"fmt ":
            _, _, rate, _, block = struct.unpack("<HHIIH", data[pos + 8:pos + 22])
        elif cid == b"data":
            n_bytes = size
        pos += 8 + size + (size & 1)
    return n_bytes / block / rate


# manifests -----------------------------------------------------------------

def test_ingest_rejects_missing_audio(corpus, tmp_path, caplog):
    lines = [json.loads(x) for x in corpus["train"].read_text().splitlines()[:3]]
    lines.append(dict(lines[0], utterance_id="ghost", audio_path=str(tmp_path / "nope.wav")))
    listing = tmp_path / "list.jsonl"
    listing.write_text("".join(json.dumps(x) + "\n" for x in lines))
    with caplog.at_level(logging.WARNING):
        m = ingest(listing)
    assert len(m) == 3 and len(m.rejected) == 1
    assert "not found" in caplog.text
    with pytest.raises(ManifestError):
        load_manifest(listing, strict=True)


def test_ingest_directory(corpus, tmp_path):
    for i, rec in enumerate(load_manifest(corpus["train"]).records[:3]):
        w = dsp.read_wav(rec.audio_path)
        dsp.write_wav(tmp_path / f"spkA-{i}.wav", w)
        (tmp_path / f"spkA-{i}.txt").write_text(rec.transcript + "\n")
    dsp.write_wav(tmp_path / "spkB-9.wav", w)  # no transcript
    m = ingest(tmp_path)
    assert [r.utterance_id for r in m] == ["spkA-0", "spkA-1", "spkA-2"]
    assert {r.speaker_id for r in m} == {"spkA"} and len(m.rejected) == 1
    for r in m:
        assert abs(r.duration_s - header_duration(r.audio_path)) < 1e-3


def test_manifest_durations_match_headers(corpus):
    for r in load_manifest(corpus["train"]):
        assert abs(r.duration_s - header_duration(r.audio_path)) < 1e-3


def test_empty_inputs_are_errors(tmp_path):
    with pytest.raises(ManifestError):
        ingest(tmp_path)
    (tmp_path / "empty.jsonl").write_text("\n")
    with pytest.raises(ManifestError):
        ingest(tmp_path / "empty.jsonl")
    with pytest.raises(ManifestError):
        ingest(tmp_path / "missing")


def test_duplicate_ids_rejected():
    r = Record("a", "/x.wav", "hi", "s", 1.0)
    with pytest.raises(ManifestError):
        CorpusManifest([r, r], [])


def test_manifest_save_load(corpus, tmp_path):
    m = load_manifest(corpus["train"])
    m.save(tmp_path / "m.jsonl")
    assert load_manifest(tmp_path / "m.jsonl").records == m.records


# mixing --------------------------------------------------------------------

def fake_manifest(origin, durations, prefix=None):
    prefix = prefix or origin[0]
    return CorpusManifest([Record(f"{prefix}{i}", f"/{prefix}{i}.wav", "x", "s", float(d), origin)
                           for i, d in enumerate(durations)], [])


def planned_hours(plan, *manifests):
    dur = {r.utterance_id: (r.origin, r.duration_s) for m in manifests if m for r in m}
    out = {"real": 0.0, "synthetic": 0.0}
    for ids in plan.checkpoints:
        for uid in ids:
            o, d = dur[uid]
            out[o] += d / 3600
    return out


def test_three_to_two_over_five_hours(rng):
    real = fake_manifest("real", rng.uniform(4, 16, 2000))
    synth = fake_manifest("synthetic", rng.uniform(2, 8, 3000))
    plan = build_training_mix(real, synth, MixPolicy(3, 2, 5.0), 1, seed=1)
    assert plan.origin_hours("real") == pytest.approx(3.0, rel=0.05)
    assert plan.origin_hours("synthetic") == pytest.approx(2.0, rel=0.05)
    assert plan.total_hours == pytest.approx(5.0, rel=0.05)
    assert planned_hours(plan, real, synth) == pytest.approx({"real": plan.origin_hours("real"),
                                                              "synthetic": plan.origin_hours("synthetic")})


def test_real_only_ratio(rng):
    real = fake_manifest("real", rng.uniform(4, 16, 100))
    plan = build_training_mix(real, None, MixPolicy(1, 0, 0.1), 5, seed=0)
    assert all(uid.startswith("r") for ids in plan.checkpoints for uid in ids)
    assert plan.origin_hours("synthetic") == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(0, 5), st.integers(1, 6), st.integers(0, 2**16))
def test_mix_accounting(a, b, n_ckpt, seed):
    rng = np.random.default_rng(seed)
    real = fake_manifest("real", rng.uniform(1, 20, 40))
    synth = fake_manifest("synthetic", rng.uniform(1, 20, 30))
    budget = 0.5
    plan = build_training_mix(real, synth if b else None, MixPolicy(a, b, budget), n_ckpt, seed)
    got = planned_hours(plan, real, synth)
    assert plan.origin_hours("real") == pytest.approx(got["real"], abs=1e-12)
    assert plan.origin_hours("synthetic") == pytest.approx(got["synthetic"], abs=1e-12)
    assert plan.total_hours == pytest.approx(got["real"] + got["synthetic"], abs=1e-12)
    # cumulative targets: drift never exceeds half the longest utterance per origin
    for origin, share in (("real", a / (a + b)), ("synthetic", b / (a + b))):
        assert abs(got[origin] - n_ckpt * budget * share) <= 10 / 3600 + 1e-12
    # one checkpoint is the difference of two cumulative positions: 2 x 10 s per origin
    for ids, hours in zip(plan.checkpoints, plan.hours):
        assert sum(hours.values()) == pytest.approx(budget, abs=40 / 3600)
    assert build_training_mix(real, synth if b else None, MixPolicy(a, b, budget), n_ckpt, seed).to_dict() == \
        plan.to_dict()


def test_per_checkpoint_proportions(rng):
    real = fake_manifest("real", rng.uniform(5, 15, 500))
    synth = fake_manifest("synthetic", rng.uniform(2, 8, 500))
    plan = build_training_mix(real, synth, MixPolicy(3, 2, 1.0), 4, seed=3)
    for h in plan.hours:
        total = h["real"] + h["synthetic"]
        assert total == pytest.approx(1.0, rel=0.05)
        assert h["real"] / total == pytest.approx(0.6, rel=0.05)


def test_repeats_are_counted(rng, caplog):
    real = fake_manifest("real", [36.0] * 10)   # 0.1 h in total
    with caplog.at_level(logging.INFO):
        plan = build_training_mix(real, None, MixPolicy(1, 0, 0.05), 5, seed=0)
    assert plan.repeats["real"] == 15
    assert "repeats" in caplog.text
    # each pass uses every utterance once before any repeats
    assert sorted(sum(plan.checkpoints[:2], [])) == sorted(r.utterance_id for r in real)


def test_mix_errors(rng):
    real = fake_manifest("real", [10.0] * 5)
    with pytest.raises(ValueError):
        build_training_mix(real, None, MixPolicy(3, 2, 1.0), 2)
    with pytest.raises(ValueError):
        build_training_mix(real, fake_manifest("real", [3.0], "q"), MixPolicy(3, 2, 1.0), 2)
    with pytest.raises(ValueError):
        build_training_mix(real, None, MixPolicy(1, 0, 1.0), 0)
    with pytest.raises(ValueError):
        MixPolicy(0, 0)
    with pytest.raises(ValueError):
        MixPolicy.parse_ratio("3-2")
    assert MixPolicy.parse_ratio("3:2", 2.0) == MixPolicy(3.0, 2.0, 2.0)


def test_plan_round_trip(tmp_path, rng):
    plan = build_training_mix(fake_manifest("real", rng.uniform(1, 5, 20)), None, MixPolicy(1, 0, 0.005), 3)
    plan.save(tmp_path / "plan.json")
    assert MixPlan.load(tmp_path / "plan.json").to_dict() == plan.to_dict()


# report --------------------------------------------------------------------

ROWS = [ReportRow("No", "No", "N", 20.5, 40.25, 21.0, 41.0),
        ReportRow("No", "No", "Y", 18.0, 38.0, None, 39.5),
        ReportRow("Yes", "GST", "N", 15.125, 35.0, 16.0, 36.0)]


def test_report_csv_round_trip(tmp_path):
    assert from_csv(to_csv(ROWS)) == ROWS
    csv_path, txt_path = write_report(ROWS, tmp_path)
    assert from_csv(csv_path.read_text()) == ROWS
    table = txt_path.read_text().splitlines()
    assert [c.strip() for c in table[2].strip("|").split("|")] == list(HEADER)
    assert [ln.split("|")[1].strip() for ln in table[4:7]] == ["No", "No", "Yes"]


def test_report_single_row_and_errors(tmp_path):
    assert len(from_csv(to_csv(ROWS[:1]))) == 1
    assert "20.5" in to_table(ROWS[:1])
    with pytest.raises(ValueError):
        write_report([], tmp_path)
    with pytest.raises(ValueError):
        from_csv("a,b\n")
    assert to_csv([]).strip() == ",".join(COLUMNS)


@given(st.dictionaries(st.sampled_from(["0.0", "0.1", "0.2", "0.5", "1.0"]), st.floats(0, 100), min_size=1))
def test_lm_weight_is_table_argmin(table):
    pick = select_lm_weight(table)
    best = min(table.values())
    assert table[pick] == best
    assert pick == min(k for k, v in table.items() if v == best)


def test_pearson():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert np.isnan(pearson([1, 1, 1], [1, 2, 3]))


# config --------------------------------------------------------------------

def test_config_defaults():
    cfg = config_from_dict({"corpora": {"toy": True}})
    assert (cfg.schedule.phase1_checkpoints, cfg.schedule.phase1_epochs, cfg.schedule.phase2_checkpoints) == (8, 4.0, 17)
    assert cfg.mix.ratio == "3:2" and cfg.asr.ctc_weight == 0.5
    assert [c.name for c in cfg.conditions] == ["baseline", "syn"]


@pytest.mark.parametrize("data", [
    {"corpora": {"toy": True}, "bogus": {}},
    {"corpora": {"toy": True, "colour": 1}},
    {"corpora": {"toy": "yes"}},
    {"corpora": {}},
    {"corpora": {"toy": True}, "tts": {"epochs": "many"}},
    {"corpora": {"toy": True}, "schedule": {"phase2_checkpoints": 0}},
    {"corpora": {"toy": True}, "lm_sweep": []},
    {"corpora": {"toy": True}, "lm_sweep": [-1]},
    {"corpora": {"toy": True}, "conditions": [{"name": "a"}, {"name": "a"}]},
    {"corpora": {"toy": True}, "conditions": [{"spec_aug": True}]},
    {"corpora": {"toy": True}, "seed": 1.5},
    [1, 2],
])
def test_config_errors(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_load_config_paths_and_yaml_errors(tmp_path):
    (tmp_path / "c.yaml").write_text("corpora:\n  train: data/train.jsonl\n  text_only: text.txt\n")
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.corpora.train == str((tmp_path / "data" / "train.jsonl").resolve())
    (tmp_path / "bad.yaml").write_text("corpora: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


# CLI -----------------------------------------------------------------------

def test_cli_exit_codes(corpus, tmp_path, monkeypatch):
    assert main(["bogus"]) == 1
    assert main(["run", "--config", str(tmp_path / "absent.yaml"), "--workdir", str(tmp_path)]) == 1
    (tmp_path / "bad.yaml").write_text("corpora: {}\n")
    assert main(["run", "--config", str(tmp_path / "bad.yaml"), "--workdir", str(tmp_path)]) == 1
    assert main(["mix", "--real", str(tmp_path / "nothing.jsonl"), "--hours", "1", "--out", "x"]) == 2
    out = tmp_path / "plan.json"
    assert main(["mix", "--real", str(corpus["train"]), "--ratio", "1:0", "--hours", "0.001",
                 "--checkpoints", "2", "--out", str(out)]) == 0
    assert len(MixPlan.load(out).checkpoints) == 2
    monkeypatch.setenv("SYNTHASR_WORKERS", "zero")
    assert main(["mix", "--real", str(corpus["train"]), "--hours", "1", "--out", str(out)]) == 2


def test_cli_report(tmp_path):
    (tmp_path / "results.json").write_text(json.dumps({"rows": [r.values() for r in ROWS]}))
    assert main(["report", "--results", str(tmp_path / "results.json"), "--out", str(tmp_path / "rep")]) == 0
    assert from_csv((tmp_path / "rep" / "report.csv").read_text()) == ROWS


def test_cli_augment_is_deterministic(corpus, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"aug{k}"
        assert main(["augment", "--manifest", str(corpus["dev-clean"]), "--out", str(out), "--mode", "speed",
                     "--factors", "0.9", "1.1", "--seed", "3"]) == 0
        outs.append(sorted(p.read_bytes() for p in out.rglob("*.wav")))
    assert len(outs[0]) == 4 and outs[0] == outs[1]


# workers and seeding -------------------------------------------------------

def test_worker_count(monkeypatch):
    monkeypatch.delenv("SYNTHASR_WORKERS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("SYNTHASR_WORKERS", "3")
    assert worker_count() == 3
    for bad in ("0", "-2", "x"):
        monkeypatch.setenv("SYNTHASR_WORKERS", bad)
        with pytest.raises(ValueError):
            worker_count()


def test_parallel_map_preserves_order():
    assert parallel_map(abs, range(-5, 5), workers=2) == [abs(x) for x in range(-5, 5)]


def test_augment_features_keyed_by_utterance(rng):
    f = dsp.FeatureMatrix(rng.normal(size=(300, 40)), "mfcc")
    a = augment_features(f, 1, "utt-1", 0, 0).data
    np.testing.assert_array_equal(a, augment_features(f, 1, "utt-1", 0, 0).data)
    assert not np.array_equal(a, augment_features(f, 1, "utt-2", 0, 0).data)
    assert not np.array_equal(a, augment_features(f, 1, "utt-1", 1, 0).data)


def test_toy_corpus_is_deterministic_and_proportional(tmp_path):
    p1 = toy.write_toy_corpus(tmp_path / "a", seed=2, splits={"train": 8}, n_text_only=3)
    p2 = toy.write_toy_corpus(tmp_path / "b", seed=2, splits={"train": 8}, n_text_only=3)
    m1, m2 = load_manifest(p1["train"]), load_manifest(p2["train"])
    for a, b in zip(m1, m2):
        assert open(a.audio_path, "rb").read() == open(b.audio_path, "rb").read()
        assert a.transcript == b.transcript
    assert pearson([r.duration_s for r in m1], [len(r.transcript) for r in m1]) > 0.9
    words = {w for r in m1 for w in r.transcript.split()}
    assert words <= set(toy.vocabulary()) and len(toy.vocabulary()) <= 30
