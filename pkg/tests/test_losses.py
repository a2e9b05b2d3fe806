import numpy as np
import pytest

from blobseg.cli import random_loss_instance
from blobseg.errors import BlobConsistencyError, ConfigError, DimensionError
from blobseg.losses import (
    LossConfig,
    blob_marginalized_ce,
    blob_mean_prob,
    consensus_loss,
    gradcheck,
    pixelwise_ce,
)
from blobseg.tensorops import softmax_channels

CFG = LossConfig(alpha=10.0, beta=5.0)


def scalar_consensus_oracle(z, y, blobs, alpha, beta):
    """Independent per-blob evaluation with plain Python loops."""
    p = softmax_channels(z)
    k, h, w = z.shape
    total = 0.0
    ids = sorted(set(blobs.ravel().tolist()))
    for blob_id in ids:
        coords = [(i, j) for i in range(h) for j in range(w) if blobs[i, j] == blob_id]
        classes = {int(y[i, j]) for i, j in coords}
        assert len(classes) == 1
        target = classes.pop()
        mean = np.zeros(k)
        for i, j in coords:
            mean += p[:, i, j]
        mean /= len(coords)
        term1 = alpha * (-np.log(mean[target]))
        term2 = 0.0
        for i, j in coords:
            term2 += sum(mean[a] * np.log(mean[a] / p[a, i, j]) for a in range(k))
        term2 *= beta / len(coords)
        total += term1 + term2
    return total / len(ids)


# ---------------------------------------------------------------------------
# pixel-wise cross-entropy
# ---------------------------------------------------------------------------

def test_pixelwise_saturated_logits_drive_loss_to_zero():
    y = np.array([[0, 1], [2, 1]])
    z = np.full((3, 2, 2), -500.0)
    for i in range(2):
        for j in range(2):
            z[y[i, j], i, j] = 500.0
    result = pixelwise_ce(z, y, CFG)
    assert result.value < 1e-12


def test_pixelwise_uniform_logits_closed_form():
    y = np.zeros((4, 4), dtype=np.int64)
    result = pixelwise_ce(np.zeros((3, 4, 4)), y, CFG)
    assert result.value == pytest.approx(np.log(3.0), rel=1e-12)


def test_pixelwise_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    z = rng.uniform(-2, 2, (3, 4, 4))
    y = rng.integers(0, 3, (4, 4))
    report = gradcheck(lambda t: pixelwise_ce(t, y, CFG), z, step=1e-5, tolerance=1e-6)
    assert report.passed, report.max_rel_error


def test_pixelwise_rejects_bad_class_ids():
    with pytest.raises(DimensionError):
        pixelwise_ce(np.zeros((3, 2, 2)), np.full((2, 2), 3), CFG)


# ---------------------------------------------------------------------------
# blob-marginalized cross-entropy
# ---------------------------------------------------------------------------

def test_marginalized_single_blob_equals_pixelwise():
    rng = np.random.default_rng(1)
    z = rng.uniform(-2, 2, (3, 4, 4))
    y = np.ones((4, 4), dtype=np.int64)
    blobs = np.ones((4, 4), dtype=np.int64)
    a = blob_marginalized_ce(z, y, blobs, CFG)
    b = pixelwise_ce(z, y, CFG)
    assert a.value == pytest.approx(b.value, abs=1e-12)
    assert np.allclose(a.grad, b.grad, atol=1e-15)


def test_marginalized_equal_size_blobs_equal_pixelwise():
    rng = np.random.default_rng(2)
    z = rng.uniform(-2, 2, (3, 4, 4))
    y = np.full((4, 4), 2, dtype=np.int64)
    blobs = np.full((4, 4), 2, dtype=np.int64)
    blobs[:, 2:] = 3  # two equal occlusion blobs
    a = blob_marginalized_ce(z, y, blobs, CFG)
    b = pixelwise_ce(z, y, CFG)
    assert a.value == pytest.approx(b.value, abs=1e-12)


def test_marginalized_small_blob_carries_half_the_occlusion_term():
    # a 1-pixel and a 99-pixel occlusion blob contribute equally
    rng = np.random.default_rng(3)
    z = rng.uniform(-2, 2, (3, 10, 10))
    y = np.full((10, 10), 2, dtype=np.int64)
    blobs = np.full((10, 10), 3, dtype=np.int64)
    blobs[0, 0] = 2
    result = blob_marginalized_ce(z, y, blobs, CFG)
    p = softmax_channels(z)
    ell = -np.log(p[2])
    tiny_mean = ell[0, 0]
    big_mean = (ell.sum() - ell[0, 0]) / 99.0
    assert result.value == pytest.approx(0.5 * tiny_mean + 0.5 * big_mean, rel=1e-12)


def test_marginalized_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    z = rng.uniform(-2, 2, (3, 6, 6))
    y = np.zeros((6, 6), dtype=np.int64)
    y[2:5, 1:4] = 1
    y[0:2, 4:6] = 2
    blobs = y.copy()
    report = gradcheck(
        lambda t: blob_marginalized_ce(t, y, blobs, CFG), z, tolerance=1e-6
    )
    assert report.passed, report.max_rel_error


def test_marginalized_rejects_mixed_blob():
    z = np.zeros((3, 2, 2))
    y = np.array([[0, 1], [0, 1]])
    blobs = np.zeros((2, 2), dtype=np.int64)  # one blob spanning two classes
    with pytest.raises(BlobConsistencyError):
        blob_marginalized_ce(z, y, blobs, CFG)


def test_marginalized_rejects_low_occlusion_ids():
    z = np.zeros((3, 2, 2))
    y = np.full((2, 2), 2)
    blobs = np.zeros((2, 2), dtype=np.int64)
    with pytest.raises(BlobConsistencyError):
        blob_marginalized_ce(z, y, blobs, CFG)


# ---------------------------------------------------------------------------
# blob mean probability
# ---------------------------------------------------------------------------

def test_blob_mean_identical_pixels():
    p = np.zeros((3, 2, 2))
    p[0], p[1], p[2] = 0.5, 0.3, 0.2
    stats = blob_mean_prob(p, np.ones((2, 2), dtype=bool))
    assert np.allclose(stats.mean_prob, [0.5, 0.3, 0.2])
    assert stats.size == 4


def test_blob_mean_two_pixel_average():
    z = np.zeros((3, 1, 2))
    z[0, 0, 0] = 30.0
    z[1, 0, 1] = 30.0
    p = softmax_channels(z)
    stats = blob_mean_prob(p, np.ones((1, 2), dtype=bool))
    assert stats.mean_prob[0] == pytest.approx(0.5, abs=1e-9)
    assert stats.mean_prob[1] == pytest.approx(0.5, abs=1e-9)
    assert stats.mean_prob.sum() == pytest.approx(1.0, abs=1e-12)


def test_blob_mean_singleton_and_empty():
    p = softmax_channels(np.random.default_rng(0).uniform(-1, 1, (3, 2, 2)))
    sel = np.zeros((2, 2), dtype=bool)
    sel[1, 1] = True
    stats = blob_mean_prob(p, sel)
    assert np.allclose(stats.mean_prob, p[:, 1, 1])
    with pytest.raises(DimensionError):
        blob_mean_prob(p, np.zeros((2, 2), dtype=bool))


# ---------------------------------------------------------------------------
# consensus loss
# ---------------------------------------------------------------------------

def test_consensus_singleton_correct_blob_contributes_zero():
    z = np.full((3, 1, 1), -500.0)
    z[1] = 500.0
    y = np.array([[1]])
    blobs = np.array([[0]])
    result = consensus_loss(z, y, blobs, CFG)
    assert result.value < 1e-12
    assert result.blob_rows[0][3] < 1e-12  # first term
    assert result.blob_rows[0][4] == 0.0  # second term vacuously zero


def test_consensus_uniform_probabilities_closed_form():
    z = np.zeros((3, 5, 5))
    y = np.full((5, 5), 2, dtype=np.int64)
    blobs = np.zeros((5, 5), dtype=np.int64)
    result = consensus_loss(z, y, blobs, CFG)
    assert result.value == pytest.approx(10.0 * np.log(3.0), rel=1e-12)
    assert result.blob_rows[0][4] == 0.0


def test_consensus_two_pixel_blob_worked_example():
    # probabilities (0.6,0.2,0.2) and (0.4,0.4,0.2), target class 0,
    # alpha=10, beta=5: the oracle below recomputes both terms directly
    p1 = np.array([0.6, 0.2, 0.2])
    p2 = np.array([0.4, 0.4, 0.2])
    z = np.log(np.stack([p1, p2], axis=1)).reshape(3, 2, 1)
    y = np.zeros((2, 1), dtype=np.int64)
    blobs = np.ones((2, 1), dtype=np.int64)
    result = consensus_loss(z, y, blobs, CFG)
    oracle = scalar_consensus_oracle(z, y, blobs, 10.0, 5.0)
    assert result.value == pytest.approx(oracle, rel=1e-12)
    mean = (p1 + p2) / 2
    term1 = 10.0 * (-np.log(mean[0]))
    kl = lambda a, b: float(np.sum(a * np.log(a / b)))
    term2 = 2.5 * (kl(mean, p1) + kl(mean, p2))
    assert result.value == pytest.approx(term1 + term2, rel=1e-10)
    assert result.value == pytest.approx(7.0708, abs=5e-5)


def test_consensus_matches_scalar_oracle_on_random_instances():
    rng = np.random.default_rng(8)
    for _ in range(10):
        z, y, blobs = random_loss_instance(rng, size=6)
        result = consensus_loss(z, y, blobs, CFG)
        oracle = scalar_consensus_oracle(z, y, blobs, CFG.alpha, CFG.beta)
        assert result.value == pytest.approx(oracle, rel=1e-10)


def test_consensus_reduces_to_pixelwise_on_singleton_blobs():
    rng = np.random.default_rng(9)
    cfg = LossConfig(alpha=1.0, beta=7.0)
    for _ in range(5):
        z = rng.uniform(-3, 3, (3, 4, 6))
        y = rng.integers(0, 3, (4, 6))
        blobs = np.arange(24).reshape(4, 6)
        a = consensus_loss(z, y, blobs, cfg)
        b = pixelwise_ce(z, y, cfg)
        assert abs(a.value - b.value) < 1e-10
        assert np.max(np.abs(a.grad - b.grad)) < 1e-10


def test_consensus_second_term_nonnegative_and_zero_iff_equal():
    rng = np.random.default_rng(10)
    for _ in range(20):
        z, y, blobs = random_loss_instance(rng, size=6)
        result = consensus_loss(z, y, blobs, CFG)
        assert all(row[4] >= 0.0 for row in result.blob_rows)
    # constant columns per blob: second term collapses
    z = np.zeros((3, 4, 4))
    z[0] = 1.0
    y = np.zeros((4, 4), dtype=np.int64)
    blobs = (np.arange(16) % 2).reshape(4, 4)
    result = consensus_loss(z, y, blobs, CFG)
    assert all(row[4] < 1e-10 for row in result.blob_rows)


def test_consensus_first_term_is_cross_entropy_of_one_hot():
    rng = np.random.default_rng(11)
    z, y, blobs = random_loss_instance(rng, size=5)
    result = consensus_loss(z, y, blobs, CFG)
    p = softmax_channels(z)
    for blob_id, cls, size, term1, _ in result.blob_rows:
        mean = p[:, blobs == blob_id].mean(axis=1)
        onehot = np.zeros(3)
        onehot[cls] = 1.0
        ce = -np.sum(onehot * np.log(mean))
        assert term1 == pytest.approx(CFG.alpha * ce, rel=1e-12)


def test_consensus_invariant_to_blob_relabeling():
    rng = np.random.default_rng(12)
    z, y, blobs = random_loss_instance(rng, size=6, max_blobs=5)
    perm = {old: new for new, old in enumerate(np.random.default_rng(1).permutation(int(blobs.max()) + 1).tolist())}
    relabeled = np.vectorize(lambda v: 10 + perm[v])(blobs)
    a = consensus_loss(z, y, blobs, CFG)
    b = consensus_loss(z, y, relabeled, CFG)
    assert a.value == pytest.approx(b.value, rel=1e-14)
    assert np.allclose(a.grad, b.grad, atol=1e-15)


def test_consensus_gradient_sums_to_zero_over_classes():
    rng = np.random.default_rng(13)
    z, y, blobs = random_loss_instance(rng)
    result = consensus_loss(z, y, blobs, CFG)
    assert np.max(np.abs(result.grad.sum(axis=0))) < 1e-14


def test_consensus_gradient_matches_finite_differences():
    rng = np.random.default_rng(14)
    z, y, blobs = random_loss_instance(rng)
    report = gradcheck(lambda t: consensus_loss(t, y, blobs, CFG), z, tolerance=1e-4)
    assert report.passed, report.max_rel_error


def test_consensus_beta_zero_keeps_first_term_gradients_exact():
    rng = np.random.default_rng(15)
    cfg = LossConfig(alpha=10.0, beta=0.0)
    z, y, blobs = random_loss_instance(rng)
    report = gradcheck(lambda t: consensus_loss(t, y, blobs, cfg), z, tolerance=1e-4)
    assert report.passed
    # second terms vanish identically
    result = consensus_loss(z, y, blobs, cfg)
    assert all(row[4] == 0.0 for row in result.blob_rows)


def test_consensus_rejects_mixed_blob_and_empty_blob():
    z = np.zeros((3, 2, 2))
    y = np.array([[0, 1], [0, 1]])
    with pytest.raises(BlobConsistencyError):
        consensus_loss(z, y, np.zeros((2, 2), dtype=np.int64), CFG)


def test_consensus_clamps_saturated_probabilities():
    z = np.zeros((3, 2, 2))
    z[0] = 800.0  # softmax underflows other classes to zero
    y = np.full((2, 2), 1, dtype=np.int64)
    result = consensus_loss(z, y, np.zeros((2, 2), dtype=np.int64), CFG)
    assert np.isfinite(result.value)
    assert np.all(np.isfinite(result.grad))
    # -log(epsilon) with the 1e-12 default clamp
    assert result.blob_rows[0][3] == pytest.approx(10.0 * -np.log(1e-12), rel=1e-6)


def test_loss_breakdown_csv():
    z = np.zeros((3, 2, 2))
    y = np.zeros((2, 2), dtype=np.int64)
    result = consensus_loss(z, y, np.zeros((2, 2), dtype=np.int64), CFG)
    text = result.breakdown_csv()
    assert text.splitlines()[0] == "blob_id,class,size,term1,term2"
    assert len(text.splitlines()) == 2


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(alpha=0.0, beta=0.0)
    with pytest.raises(ConfigError):
        LossConfig(epsilon=0.5)
    with pytest.raises(ConfigError):
        LossConfig(epsilon=0.0)


def test_gradcheck_step_bounds():
    z = np.zeros((3, 2, 2))
    y = np.zeros((2, 2), dtype=np.int64)
    with pytest.raises(ConfigError):
        gradcheck(lambda t: pixelwise_ce(t, y, CFG), z, step=1e-8)
    with pytest.raises(ConfigError):
        gradcheck(lambda t: pixelwise_ce(t, y, CFG), z, step=1e-2)
