"""Branch CNN tests: training smoke, transfer surgery, freezing, inference."""

import numpy as np
import numpy.testing as npt
import pytest

from pcgkit.dsp import BINARY, THREE_CLASS
from pcgkit.errors import (FormatError, NoCyclesError, ShapeError, TrainingDivergedError,
                           TrainingSetupError)
from pcgkit.layers import Dense
from pcgkit.pcgnet import (BranchCnnModel, TrainConfig, branch_flat_dim, finetune, load_model,
                           predict_recording, pretrain_binary, save_model, transfer_head)


class FakeCycle:
    """Stands in for CardiacCycle in unit tests; only .bands is consumed."""

    def __init__(self, bands):
        self.bands = np.asarray(bands, dtype=np.float64)


def toy_cycles(n_per_class, cycle_len=400, classes=BINARY, seed=0):
    """Separable synthetic cycles: each class gets its own tone frequency."""
    rng = np.random.default_rng(seed)
    t = np.arange(cycle_len) / 1000.0
    freqs = {0: 30.0, 1: 90.0, 2: 160.0}
    cycles, labels = [], []
    for ci, cls in enumerate(classes):
        for _ in range(n_per_class):
            tone = np.sin(2 * np.pi * freqs[ci] * t + rng.uniform(0, 2 * np.pi))
            bands = np.tile(tone, (4, 1)) + 0.05 * rng.normal(size=(4, cycle_len))
            cycles.append(FakeCycle(bands))
            labels.append(cls)
    return cycles, labels


class TestModelShapes:
    def test_flat_dim_for_full_cycles(self):
        assert 4 * branch_flat_dim(2500) == 9952  # 4 branches x 4 filters x 622

    def test_binary_and_three_class_heads(self):
        b = BranchCnnModel(classes=BINARY, hidden=(20,), cycle_len=400)
        t = BranchCnnModel(classes=THREE_CLASS, hidden=(239, 20), cycle_len=400)
        assert b.head[-1].n_out == 2
        assert t.head[-1].n_out == 3
        assert [d.n_out for d in t.head[:-1]] == [239, 20]

    def test_parameter_names_unique(self):
        model = BranchCnnModel(front="linear_phase", cycle_len=400)
        names = [p.name for p in model.parameters()]
        assert len(names) == len(set(names))

    def test_attach_head_dimension_mismatch(self):
        model = BranchCnnModel(cycle_len=400)
        rng = np.random.default_rng(0)
        with pytest.raises(ShapeError, match="flatten"):
            model.attach_head([Dense(123, 2, rng, "bad")])

    def test_posteriors_are_distributions(self):
        model = BranchCnnModel(classes=THREE_CLASS, hidden=(8,), cycle_len=300, seed=3)
        x = np.random.default_rng(1).normal(size=(5, 4, 300))
        probs = model.predict_proba(x)
        npt.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(probs >= 0)


class TestPretrainBinary:
    def test_overfit_smoke(self):
        cycles, labels = toy_cycles(20, classes=BINARY)
        cfg = TrainConfig(epochs=30, lr=3e-3, batch_size=16, dropout=0.0, seed=0)
        model, log = pretrain_binary(cycles, labels, cfg)
        preds = np.argmax(model.predict_proba(np.stack([c.bands for c in cycles])), axis=1)
        truth = np.array([BINARY.index(y) for y in labels])
        accuracy = float(np.mean(preds == truth))
        assert accuracy >= 0.95, f"training accuracy {accuracy}"
        assert len(log.rows) == 30

    def test_single_class_rejected(self):
        cycles, labels = toy_cycles(4, classes=("normal",))
        with pytest.raises(TrainingSetupError, match="2 classes"):
            pretrain_binary(cycles, ["normal"] * len(cycles))

    def test_empty_corpus_rejected(self):
        with pytest.raises(TrainingSetupError, match="empty"):
            pretrain_binary([], [])

    def test_seeded_determinism(self):
        cycles, labels = toy_cycles(6, classes=BINARY)
        cfg = TrainConfig(epochs=3, lr=1e-3, batch_size=8, dropout=0.5, seed=11)
        m1, _ = pretrain_binary(cycles, labels, cfg)
        m2, _ = pretrain_binary(cycles, labels, cfg)
        for p1, p2 in zip(m1.parameters(), m2.parameters()):
            assert p1.data.tobytes() == p2.data.tobytes()


class TestTransferHead:
    def _pretrained(self):
        cycles, labels = toy_cycles(6, classes=BINARY)
        cfg = TrainConfig(epochs=2, lr=1e-3, batch_size=8, dropout=0.0, seed=0)
        model, _ = pretrain_binary(cycles, labels, cfg)
        return model

    def test_feature_weights_copied_and_head_fresh(self):
        model = self._pretrained()
        new = transfer_head(model, hidden=(239, 20), classes=THREE_CLASS)
        for src, dst in zip(model.feature_parameters(), new.feature_parameters()):
            assert src.data.tobytes() == dst.data.tobytes()
            assert src is not dst
        assert new.head[-1].n_out == 3

    def test_frozen_branches_bit_identical_through_finetune(self):
        model = self._pretrained()
        new = transfer_head(model, classes=THREE_CLASS, freeze_front=True)
        frozen_bytes = [p.data.tobytes() for p in new.feature_parameters()]
        cycles, labels = toy_cycles(5, classes=THREE_CLASS)
        cfg = TrainConfig(epochs=4, lr=4.5e-5, batch_size=8, dropout=0.0, seed=1)
        finetune(new, cycles, labels, cfg)
        for p, before in zip(new.feature_parameters(), frozen_bytes):
            assert p.data.tobytes() == before

    def test_unfrozen_branches_change(self):
        model = self._pretrained()
        new = transfer_head(model, classes=THREE_CLASS, freeze_front=False)
        before = [p.data.copy() for p in new.feature_parameters()]
        cycles, labels = toy_cycles(5, classes=THREE_CLASS)
        cfg = TrainConfig(epochs=4, lr=4.5e-5, batch_size=8, dropout=0.0, seed=1)
        finetune(new, cycles, labels, cfg)
        changed = any(not np.array_equal(p.data, b)
                      for p, b in zip(new.feature_parameters(), before))
        assert changed


class TestFinetune:
    def test_metrics_rows_and_ranges(self):
        model = BranchCnnModel(classes=THREE_CLASS, hidden=(16, 8), cycle_len=400, seed=0)
        cycles, labels = toy_cycles(5, classes=THREE_CLASS)
        cfg = TrainConfig(epochs=6, lr=1e-4, batch_size=8, dropout=0.5, seed=2)
        _, log = finetune(model, cycles, labels, cfg)
        assert len(log.rows) == 6
        for row in log.rows:
            for c in THREE_CLASS:
                assert 0.0 <= row.recalls[c] <= 1.0
            assert 0.0 <= row.uar <= 1.0

    def test_logged_uar_matches_confusion_recomputation(self):
        model = BranchCnnModel(classes=THREE_CLASS, hidden=(16,), cycle_len=400, seed=0)
        cycles, labels = toy_cycles(4, classes=THREE_CLASS)
        cfg = TrainConfig(epochs=3, lr=1e-4, batch_size=8, dropout=0.0, seed=3)
        _, log = finetune(model, cycles, labels, cfg)
        for row in log.rows:
            cm = row.confusion
            recalls = [cm[i, i] / cm[i].sum() for i in range(3) if cm[i].sum()]
            npt.assert_allclose(row.uar, np.mean(recalls), atol=1e-12)

    def test_binary_model_rejected(self):
        model = BranchCnnModel(classes=BINARY, cycle_len=400)
        cycles, labels = toy_cycles(3, classes=BINARY)
        with pytest.raises(TrainingSetupError, match="3-class"):
            finetune(model, cycles, labels)

    def test_divergence_detected(self):
        model = BranchCnnModel(classes=THREE_CLASS, hidden=(16,), cycle_len=400, seed=0)
        cycles, labels = toy_cycles(4, classes=THREE_CLASS)
        cfg = TrainConfig(epochs=50, lr=1e12, batch_size=8, dropout=0.0, seed=4)
        with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError):
            finetune(model, cycles, labels, cfg)

    def test_metrics_csv(self, tmp_path):
        model = BranchCnnModel(classes=THREE_CLASS, hidden=(16,), cycle_len=400, seed=0)
        cycles, labels = toy_cycles(3, classes=THREE_CLASS)
        cfg = TrainConfig(epochs=2, lr=1e-4, batch_size=8, dropout=0.0, seed=5)
        _, log = finetune(model, cycles, labels, cfg)
        path = tmp_path / "metrics.csv"
        log.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,loss,recall_normal,recall_mild,recall_severe,uar"
        assert len(lines) == 3


class TestPredictRecording:
    class StubModel:
        classes = THREE_CLASS

        def __init__(self, posteriors):
            self.posteriors = np.asarray(posteriors)

        def predict_proba(self, bands):
            return self.posteriors

    def test_mean_posterior_argmax(self):
        model = self.StubModel([(0.9, 0.1, 0.0), (0.5, 0.3, 0.2)])
        label, post = predict_recording(model, [FakeCycle(np.zeros((4, 10)))] * 2)
        npt.assert_allclose(post, [0.7, 0.2, 0.1])
        assert label == "normal"

    def test_single_cycle_equals_cycle_prediction(self):
        model = self.StubModel([(0.2, 0.5, 0.3)])
        label, post = predict_recording(model, [FakeCycle(np.zeros((4, 10)))])
        assert label == "mild"
        npt.assert_allclose(post, [0.2, 0.5, 0.3])

    def test_permutation_invariant(self):
        rng = np.random.default_rng(6)
        raw = rng.dirichlet(np.ones(3), size=5)
        a = self.StubModel(raw)
        b = self.StubModel(raw[::-1])
        cycles = [FakeCycle(np.zeros((4, 10)))] * 5
        assert predict_recording(a, cycles)[0] == predict_recording(b, cycles)[0]
        npt.assert_allclose(predict_recording(a, cycles)[1], predict_recording(b, cycles)[1])

    def test_empty_cycles_error(self):
        model = self.StubModel(np.zeros((0, 3)))
        with pytest.raises(NoCyclesError):
            predict_recording(model, [])


class TestSaveLoad:
    def test_round_trip_bit_exact(self, tmp_path):
        model = BranchCnnModel(classes=THREE_CLASS, hidden=(12, 6), front="linear_phase",
                               kernel_len=21, cycle_len=300, seed=9)
        path = tmp_path / "model.pcgm"
        save_model(model, path)
        back = load_model(path)
        assert back.classes == model.classes
        for p1, p2 in zip(model.parameters(), back.parameters()):
            assert p1.name == p2.name
            assert p1.data.tobytes() == p2.data.tobytes()

    def test_training_determinism_gives_identical_files(self, tmp_path):
        cycles, labels = toy_cycles(4, classes=BINARY)
        cfg = TrainConfig(epochs=2, lr=1e-3, batch_size=8, dropout=0.5, seed=1)
        paths = []
        for tag in ("a", "b"):
            model, _ = pretrain_binary(cycles, labels, cfg)
            p = tmp_path / f"{tag}.pcgm"
            save_model(model, p)
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_loading_other_kind_rejected(self, tmp_path):
        from pcgkit.model_io import ModelManifest, save_manifest
        path = tmp_path / "other.pcgm"
        save_manifest(path, ModelManifest(descriptor={"kind": "mystery"}, params={}))
        with pytest.raises(ShapeError, match="mystery"):
            load_model(path)

    def test_wrong_parameter_set_rejected(self, tmp_path):
        model = BranchCnnModel(cycle_len=300, seed=0)
        manifest = model.manifest()
        manifest.params.pop(next(iter(manifest.params)))
        path = tmp_path / "m.pcgm"
        from pcgkit.model_io import save_manifest
        save_manifest(path, manifest)
        with pytest.raises(FormatError, match="mismatch"):
            load_model(path)
