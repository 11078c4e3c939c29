import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radlabel.corpus import (
    EncodedSentence,
    Report,
    SyntheticSpec,
    Template,
    Vocabulary,
    generate_synthetic,
)
from radlabel.errors import InputError
from radlabel.net.adam import AdamState, adam_step
from radlabel.net.model import EncodedBatch, backward_batch, forward_batch
from radlabel.net.params import DropoutConfig, ModelDims, init_params
from radlabel.rules import default_lexicon_path, default_negation_rules_path, label_report, load_lexicon, load_negation_rules
from radlabel.trainer import (
    Checkpoint,
    EarlyStopper,
    LabeledScore,
    TrainConfig,
    build_training_vocabulary,
    evaluate,
    label_corpus,
    make_training_set,
    predict_report,
    predict_sentence,
    sort_labeled,
    split_report_ids,
    train,
)

TOY_DIMS = ModelDims(vocab_size=60, embed_dim=8, hidden_units=8, max_len=10)


def _toy_corpus(n_reports=12, seed=5):
    spec = SyntheticSpec(
        seed=seed,
        n_reports=n_reports,
        sentences_per_report=(2, 3),
        templates=[
            Template(
                name="fx",
                body_region="chest",
                abnormal_probability=0.4,
                abnormal_text="There is a {small|large} pleural effusion.",
                normal_text="No pleural effusion is seen.",
            ),
            Template(
                name="cm",
                body_region="chest",
                abnormal_probability=0.3,
                abnormal_text="The heart is enlarged with cardiomegaly.",
                normal_text="The heart size is normal.",
            ),
        ],
    )
    reports = generate_synthetic(spec)
    lexicon = load_lexicon(default_lexicon_path())
    rules = load_negation_rules(default_negation_rules_path())
    labels = {r.id: label_report(r, lexicon, rules)[0].sentence_labels for r in reports}
    return reports, labels


def _toy_config(seed=3, **overrides):
    defaults = dict(
        batch_size=8,
        max_epochs=3,
        patience=2,
        validation_fraction=0.2,
        seed=seed,
        dims=TOY_DIMS,
        dropout=DropoutConfig(0.1, 0.2, seed),
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


def _trained(seed=3, **overrides):
    reports, labels = _toy_corpus()
    config = _toy_config(seed=seed, **overrides)
    vocab = build_training_vocabulary(reports, config)
    dataset = make_training_set(
        reports, labels, vocab, TOY_DIMS.max_len, config.seed, config.validation_fraction
    )
    checkpoint, history = train(dataset.train, dataset.val, config, vocab)
    return reports, dataset, checkpoint, history


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def test_split_arithmetic_ten_reports():
    texts = ["No fracture. Mild edema. The heart is normal."] * 10
    reports = [Report(id=f"r{i}", text=t) for i, t in enumerate(texts)]
    labels = {r.id: [0, 1, 0] for r in reports}
    vocab = build_training_vocabulary(reports, _toy_config())
    dataset = make_training_set(reports, labels, vocab, 10, seed=1, validation_fraction=0.1)
    assert len(dataset.val_ids) == 1
    assert len(dataset.train) == 27
    assert len(dataset.val) == 3


def test_split_same_seed_identical():
    ids = [f"r{i}" for i in range(25)]
    assert split_report_ids(ids, 0.2, 9) == split_report_ids(ids, 0.2, 9)


def test_split_permutation_invariance():
    ids = [f"r{i}" for i in range(25)]
    shuffled = list(reversed(ids))
    assert split_report_ids(ids, 0.2, 9) == split_report_ids(shuffled, 0.2, 9)


def test_split_needs_two_reports():
    with pytest.raises(InputError):
        split_report_ids(["only"], 0.5, 0)


def test_make_training_set_validates_labels():
    reports, labels = _toy_corpus()
    del labels[reports[0].id]
    vocab = Vocabulary(token_to_index={}, max_size=10)
    with pytest.raises(InputError, match="no rule labels"):
        make_training_set(reports, labels, vocab, 10, seed=0)


def test_make_training_set_validates_label_counts():
    reports, labels = _toy_corpus()
    labels[reports[0].id] = labels[reports[0].id] + [0]
    vocab = Vocabulary(token_to_index={}, max_size=10)
    with pytest.raises(InputError, match="rule labels for"):
        make_training_set(reports, labels, vocab, 10, seed=0)


# ---------------------------------------------------------------------------
# Early stopping
# ---------------------------------------------------------------------------


def test_early_stopper_patience_one_increasing():
    stopper = EarlyStopper(patience=1)
    assert not stopper.update(1, 1.0)
    assert stopper.update(2, 1.1)  # stops after epoch 2
    assert stopper.best_epoch == 1


def test_early_stopper_counts_from_best():
    stopper = EarlyStopper(patience=3)
    losses = {1: 0.9, 2: 0.5, 3: 0.6, 4: 0.55, 5: 0.58}
    stops = {epoch: stopper.update(epoch, loss) for epoch, loss in losses.items()}
    assert stops == {1: False, 2: False, 3: False, 4: False, 5: True}
    assert stopper.best_epoch == 2


def test_early_stopper_tie_is_not_improvement():
    stopper = EarlyStopper(patience=2)
    assert not stopper.update(1, 0.5)
    assert not stopper.update(2, 0.5)
    assert stopper.update(3, 0.5)
    assert stopper.best_epoch == 1


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def test_train_single_epoch_runs():
    _, _, checkpoint, history = _trained(max_epochs=1)
    assert len(history.rows) == 1
    assert not history.stopped_early
    assert history.best_epoch == 1


def test_train_restores_best_epoch_val_loss_exactly():
    _, dataset, checkpoint, history = _trained(max_epochs=4)
    best = history.rows[history.best_epoch - 1]
    val_loss, val_acc = evaluate(checkpoint.params, dataset.val, 8)
    assert val_loss == best.val_loss
    assert val_acc == best.val_accuracy


def test_train_deterministic_checkpoint_bytes(tmp_path):
    for run in (0, 1):
        _, _, checkpoint, _ = _trained(seed=11, max_epochs=2)
        checkpoint.save(tmp_path / f"run{run}.rlck")
    assert (tmp_path / "run0.rlck").read_bytes() == (tmp_path / "run1.rlck").read_bytes()


def test_train_rejects_empty_split():
    reports, labels = _toy_corpus()
    config = _toy_config()
    vocab = build_training_vocabulary(reports, config)
    dataset = make_training_set(reports, labels, vocab, 10, config.seed, 0.2)
    with pytest.raises(InputError):
        train([], dataset.val, config, vocab)


def test_memorization_loss_decreases_for_19_of_20_seeds():
    dims = ModelDims(vocab_size=12, embed_dim=6, hidden_units=6, max_len=6)
    passed = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        sentences = []
        for _ in range(64):
            length = int(rng.integers(2, 7))
            indices = np.zeros(6, dtype=np.int32)
            indices[:length] = rng.integers(2, 12, size=length)
            label = int(2 in indices[:length] or 3 in indices[:length])
            sentences.append(EncodedSentence(indices, length, label))
        batch = EncodedBatch.from_sentences(sentences)
        params = init_params(dims, rng, np.float64)
        state = AdamState.init_like(params)
        initial = float(forward_batch(params, batch).losses.mean())
        for _ in range(200):
            result = forward_batch(params, batch)
            grads = backward_batch(params, batch, result)
            adam_step(params, grads, state, lr=0.01)
        final = float(forward_batch(params, batch).losses.mean())
        passed += final <= 0.1 * initial
    assert passed >= 19


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------


def test_checkpoint_roundtrip_bitwise(tmp_path):
    _, _, checkpoint, history = _trained()
    path = tmp_path / "model.rlck"
    checkpoint.save(path)
    loaded = Checkpoint.load(path)
    for name, array in checkpoint.params.arrays().items():
        assert np.array_equal(array, loaded.params.arrays()[name]), name
        assert loaded.params.arrays()[name].dtype == np.float32
    assert loaded.vocab.token_to_index == checkpoint.vocab.token_to_index
    assert loaded.config.to_dict() == checkpoint.config.to_dict()
    assert loaded.history.best_epoch == history.best_epoch
    assert loaded.dims == checkpoint.dims


def test_checkpoint_excludes_wall_seconds(tmp_path):
    _, _, checkpoint, _ = _trained()
    path = tmp_path / "model.rlck"
    checkpoint.save(path)
    header = path.read_bytes().split(b"\n", 1)[0].decode("utf-8")
    assert "wall_seconds" not in header


def test_checkpoint_load_errors(tmp_path):
    missing = tmp_path / "nope.rlck"
    with pytest.raises(InputError, match="not found"):
        Checkpoint.load(missing)
    bad = tmp_path / "bad.rlck"
    bad.write_bytes(b"not json\nxxxx")
    with pytest.raises(InputError):
        Checkpoint.load(bad)


def test_history_csv_has_wall_seconds():
    _, _, _, history = _trained()
    csv = history.to_csv()
    assert csv.splitlines()[0] == "epoch,train_loss,val_loss,val_accuracy,wall_seconds"
    assert len(csv.splitlines()) == len(history.rows) + 1


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def test_predict_sentence_untrained_zero_head_is_half():
    reports, dataset, checkpoint, _ = _trained(max_epochs=1)
    checkpoint.params.head_w[:] = 0.0
    checkpoint.params.head_b[:] = 0.0
    assert predict_sentence(checkpoint, "No pleural effusion is seen.") == 0.5


def test_predict_sentence_deterministic_and_validates():
    _, _, checkpoint, _ = _trained()
    a = predict_sentence(checkpoint, "There is a small pleural effusion.")
    b = predict_sentence(checkpoint, "There is a small pleural effusion.")
    assert a == b
    with pytest.raises(InputError):
        predict_sentence(checkpoint, "   ")


def test_predict_report_maxpools():
    reports, _, checkpoint, _ = _trained()
    scored = predict_report(checkpoint, reports[0])
    assert scored.score == max(scored.sentence_scores)
    assert scored.hard_label == int(scored.score >= 0.5)
    assert 0.0 <= scored.uncertainty <= 1.0


def test_appending_sentence_never_lowers_report_score():
    reports, _, checkpoint, _ = _trained()
    for report in reports[:5]:
        base = predict_report(checkpoint, report).score
        longer = Report(
            id=report.id, text=report.text + " There is a small pleural effusion."
        )
        assert predict_report(checkpoint, longer).score >= base


def test_label_corpus_matches_predict_report_and_sorts():
    reports, _, checkpoint, _ = _trained()
    scored = label_corpus(checkpoint, reports, threshold=0.5, sort="none")
    assert [s.report_id for s in scored] == [r.id for r in reports]
    for entry, report in zip(scored, reports):
        assert entry.score == predict_report(checkpoint, report).score

    by_score = label_corpus(checkpoint, reports, sort="score_desc")
    keys = [(-s.score, s.report_id) for s in by_score]
    assert keys == sorted(keys)


def test_sort_labeled_uncertainty_example():
    results = [
        LabeledScore("a", 0.9, 1, [0.9]),
        LabeledScore("b", 0.5, 1, [0.5]),
        LabeledScore("c", 0.1, 0, [0.1]),
    ]
    ordered = sort_labeled(results, "uncertainty_desc")
    assert [r.report_id for r in ordered] == ["b", "a", "c"]
    assert sort_labeled(results, "none") == results
    with pytest.raises(InputError):
        sort_labeled(results, "sideways")


@given(scores=st.lists(st.floats(min_value=0.001, max_value=0.999), min_size=1, max_size=12))
@settings(max_examples=40, deadline=None)
def test_sort_labeled_score_matches_generic_sort(scores):
    results = [
        LabeledScore(f"r{i:02d}", s, int(s >= 0.5), [s]) for i, s in enumerate(scores)
    ]
    ordered = sort_labeled(results, "score_desc")
    expected = sorted(results, key=lambda r: (-r.score, r.report_id))
    assert [r.report_id for r in ordered] == [r.report_id for r in expected]


def test_uncertainty_definition():
    assert LabeledScore("x", 0.5, 1, [0.5]).uncertainty == 1.0
    assert LabeledScore("x", 1.0, 1, [1.0]).uncertainty == 0.0
    assert abs(LabeledScore("x", 0.9, 1, [0.9]).uncertainty - 0.2) < 1e-12
