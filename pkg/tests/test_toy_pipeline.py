"""Slow checks on the trained toy pipeline (shares the cached seed-0 run)."""

import numpy as np
import pytest

from mmfp.datagen import toy2d_paraphrases
from mmfp.latentflow import (FlowTrainConfig, SamplerConfig, VectorField, conditional_fm_loss, draw_fm,
                             generate_motion, sample_latent)
from mmfp.pipeline import _latent_pairs
from mmfp.rng import make_rng
from mmfp.textcond import make_text_head

import pipelines

pytestmark = pytest.mark.slow

N_DRAWS = 64


def fm_draws(Z, seed=11):
    item = np.repeat(np.arange(len(Z)), N_DRAWS)
    S, Z0 = draw_fm(make_rng(seed, "fm-eval"), len(item), Z.shape[1])
    return item, S, Z0


def fm_loss_on(field, head, Z, C, item, S, Z0):
    return conditional_fm_loss(field, head, Z[item], C[item], S, Z0)


def fm_floor(Z, texts, item, S, Z0):
    """Exact minimum of the conditional FM loss for the empirical latent distribution.

    The best field predicts E[z1 - z0 | z_s, s, text]; with z_s = (1-s) z0 + s z1 the
    posterior over the text's latents is Gaussian-weighted, and the residual is
    ||z1 - E[z1 | z_s]||^2 / (1-s)^2 per draw.
    """
    texts = np.asarray(texts)
    total = 0.0
    for k, i in enumerate(item):
        z1, s = Z[i], S[k]
        zs = (1 - s) * Z0[k] + s * z1
        cand = Z[texts == texts[i]]
        logw = -np.sum((zs - s * cand) ** 2, axis=1) / (2 * (1 - s) ** 2)
        w = np.exp(logw - logw.max())
        mean = w @ cand / w.sum()
        total += np.sum((z1 - mean) ** 2) / (1 - s) ** 2
    return total / len(item)


@pytest.fixture(scope="module")
def trained():
    ckpt, history = pipelines.toy_flow(0, 0.1)
    ds = pipelines.toy_dataset(0)
    Z, texts, _ = _latent_pairs(pipelines.toy_base(0), ds)
    C = np.stack([ckpt.text_encoder(t) for t in texts])
    return ckpt, history, Z, texts, C


def test_fm_loss_drops_tenfold(trained):
    ckpt, _, Z, _, C = trained
    cfg = FlowTrainConfig(seed=0)
    init_field = VectorField.create(Z.shape[1], cfg.p, cfg.hidden, cfg.seed, cfg.time_features)
    init_head = make_text_head(cfg.p, cfg.head_hidden, cfg.seed)
    item, S, Z0 = fm_draws(Z)
    before = fm_loss_on(init_field, init_head, Z, C, item, S, Z0)
    after = fm_loss_on(ckpt.head.field, ckpt.text_head, Z, C, item, S, Z0)
    assert before / after >= 10.0, f"FM loss {before:.3f} -> {after:.3f} ({before / after:.2f}x)"


def test_fm_loss_reaches_empirical_floor(trained):
    ckpt, _, Z, texts, C = trained
    item, S, Z0 = fm_draws(Z)
    after = fm_loss_on(ckpt.head.field, ckpt.text_head, Z, C, item, S, Z0)
    floor = fm_floor(Z, texts, item, S, Z0)
    assert floor <= after <= 1.15 * floor


def test_training_history_logged(trained):
    _, history, *_ = trained
    assert len(history) == FlowTrainConfig().epochs
    assert [h["epoch"] for h in history[:3]] == [0, 1, 2]
    assert history[-1]["main"] < history[0]["main"]


def test_euler_step_doubling_converges(trained):
    # at the default S, doubling the steps moves the endpoint less than the previous doubling did
    ckpt, *_ = trained
    field = ckpt.head.field
    S = SamplerConfig().steps
    z0 = make_rng(0, "doubling").standard_normal((32, field.m))
    for text in pipelines.toy_dataset(0).texts():
        tau = ckpt.text_head(ckpt.text_encoder(text))
        half, full, double = (sample_latent(field, tau, SamplerConfig(k), z0=z0) for k in (S // 2, S, 2 * S))
        assert np.linalg.norm(double - full) <= np.linalg.norm(full - half), text


def test_generate_motion_contract(trained):
    ckpt, *_ = trained
    ds = pipelines.toy_dataset(0)
    assert generate_motion(ckpt, "go to the origin", 0) == []
    xs = generate_motion(ckpt, ds.texts(2)[0], 5, SamplerConfig(seed=3))
    assert len(xs) == 5 and all(x.T == ds.T and x.space == ds.space for x in xs)
    again = generate_motion(ckpt, ds.texts(2)[0], 5, SamplerConfig(seed=3))
    assert all(np.array_equal(a.points, b.points) for a, b in zip(xs, again))
    # generated motions keep the demonstrations' shared start and goal
    starts = np.array([x.points[0] for x in xs])
    ends = np.array([x.points[-1] for x in xs])
    assert np.abs(starts - ds.trajectories[0].points[0]).max() < 0.25
    assert np.abs(ends).max() < 0.25


def test_regularizer_collapses_training_paraphrases():
    # the penalty's direct effect: training paraphrases land on their canonical embedding
    train, _ = toy2d_paraphrases()

    def spread(ckpt):
        enc, head = ckpt.text_encoder, ckpt.text_head
        return np.mean([np.linalg.norm(head(enc(p)) - head(enc(t))) for t in train for p in train[t]])

    with_reg, without = spread(pipelines.toy_flow(0, 0.1)[0]), spread(pipelines.toy_flow(0, 0.0)[0])
    assert with_reg <= 0.05 * without, (with_reg, without)
