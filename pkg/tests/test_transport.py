import numpy as np
import pytest

from stnet import diffcore as dc
from stnet.algebra import LAWS, LAWS_BY_NAME, equivalent_term, eval_term, parse_term, random_term
from stnet.embed import snap
from stnet.mirrored import MirroredPair, RIESZ_PAIR, apply_candidate, law_row
from stnet.transport import (
    DirectBaseline, TransportConfig, TransportModel, baseline_apply, baseline_realization,
    candidate_graph, induced_op, induced_realization, load_model, phi_forward, phi_inverse,
    predict_latent, predict_latent_mirrored, sample_instance, save_model, train_baseline,
    train_transport, transport_loss, _predict_batch, _roots_graph,
)

L = 16


def _lat(rng, n, scale=2.0, l=L):
    return snap(rng.normal(0.0, scale, (n, l)))


def _random_model(pair=RIESZ_PAIR, seed=0, l=L, scale=2.0):
    return TransportModel.create(pair, l).randomize(np.random.default_rng(seed), scale)


def test_identity_init(rng):
    m = TransportModel.create(RIESZ_PAIR, L)
    z = rng.normal(size=(10, L))
    assert np.array_equal(phi_forward(m, z), z)
    a, b = _lat(rng, 2)
    assert np.array_equal(induced_op(m, "meet", a, b), np.minimum(a, b))
    assert np.array_equal(predict_latent(m, parse_term("x1 & x2"), [a, b]), np.minimum(a, b))


def test_single_layer_definition():
    m = TransportModel.create(RIESZ_PAIR, 2, num_layers=1, hidden=1, depth=1)
    m.params["c0.0.W"][...] = 1.0  # net(x1) = x1
    assert phi_forward(m, np.array([3.0, 4.0])).tolist() == [3.0, 7.0]
    assert phi_inverse(m, np.array([3.0, 7.0])).tolist() == [3.0, 4.0]


def test_construction_errors():
    with pytest.raises(ValueError):
        TransportModel.create(RIESZ_PAIR, 15)
    with pytest.raises(ValueError):
        TransportModel.create(MirroredPair("min", "mat_prod"), 18)
    with pytest.raises(ValueError):
        TransportModel.create(RIESZ_PAIR, 16, num_layers=0)
    with pytest.raises(ValueError):
        phi_forward(TransportModel.create(RIESZ_PAIR, 16), np.zeros(8))


def test_round_trip_bitwise(rng):
    for seed in range(3):
        m = _random_model(seed=seed, l=64, scale=3.0)
        z = _lat(rng, 10_000, l=64)
        f = phi_forward(m, z)
        assert np.abs(f - z).max() > 1.0
        assert np.array_equal(phi_inverse(m, f), z)
        assert np.array_equal(phi_forward(m, phi_inverse(m, z)), z)


def test_round_trip_independent_of_batch_shape(rng):
    m = _random_model(seed=4, l=64)
    z = _lat(rng, 257, l=64)
    f = phi_forward(m, z)
    for k in (0, 1, 100, 256):
        assert np.array_equal(phi_forward(m, z[k]), f[k])
        assert np.array_equal(phi_inverse(m, f[k]), z[k])


def test_negation_conjugates_min_to_max(rng):
    # phi(z) = -z is not a coupling map; realize it by hand through Eq. 1
    a, b = rng.normal(size=(2, 8))
    assert np.array_equal(-np.minimum(-a, -b), np.maximum(a, b))


def test_riesz_laws_bitwise_for_random_phi(rng):
    m = _random_model(seed=7, scale=3.0)
    real = induced_realization(m)
    for law in LAWS:
        args = list(_lat(rng, 3 * 100).reshape(3, 100, L))
        assert np.array_equal(eval_term(law.lhs, real, args), eval_term(law.rhs, real, args)), law.name


def test_riesz_induced_meet_commutes(rng):
    m = _random_model(seed=8)
    a, b = _lat(rng, 50), _lat(rng, 50)
    assert np.array_equal(induced_op(m, "&", a, b), induced_op(m, "&", b, a))


def test_nonlawful_pair_violates_a_law_in_latent_space(rng):
    m = TransportModel.create(MirroredPair("sub", "cyclic_add"), L)
    real = induced_realization(m)
    args = list(rng.uniform(size=(3, 64, L)))
    law = LAWS_BY_NAME["commutativity"]
    assert np.abs(eval_term(law.lhs, real, args) - eval_term(law.rhs, real, args)).max() > 1e-9


def test_riesz_self_consistency_bitwise(rng):
    m = _random_model(seed=9)
    for t in range(30):
        p = random_term(int(rng.integers(1, 11)), rng)
        zs = _lat(rng, 10)
        base = predict_latent(m, p, zs)
        assert np.array_equal(base, predict_latent_mirrored(m, p, zs))
        for j in (1, 4, 8):
            q = equivalent_term(p, j, rng)
            assert np.array_equal(predict_latent(m, q, zs), base)


def test_bare_variable_term_returns_input(rng):
    m = _random_model(MirroredPair("min", "add"))
    z = _lat(rng, 1)[0]
    assert np.array_equal(predict_latent(m, parse_term("x1"), [z]), z)


@pytest.mark.parametrize("op", ["min", "max", "add", "sub", "hadamard", "scaled_add", "mat_prod", "cyclic_add"])
def test_candidate_graph_matches_numpy(op, rng):
    a, b = rng.normal(size=(2, 3, 16))
    assert np.array_equal(candidate_graph(op, dc.const(a), dc.const(b)).value, apply_candidate(op, a, b))


@pytest.mark.parametrize("pair", ["max,min", "min,mat_prod", "add,sub", "sub,cyclic_add"])
def test_graph_prediction_matches_numpy(pair, rng):
    m = _random_model(MirroredPair.parse(pair), scale=0.5)
    lat = _lat(rng, 40, scale=0.5)
    inst = [sample_instance(rng, np.arange(40), 10) for _ in range(8)]
    assert np.array_equal(_roots_graph(m, m.params.leaves(), inst, lat).value, _predict_batch(m, inst, lat))


def _loss_inputs(rng, small_embed, small_latents, kind_or_pair):
    if kind_or_pair in ("mlp_concat", "symmetric"):
        model = DirectBaseline.create(kind_or_pair, 16, hidden=32, rng=rng)
    else:
        model = TransportModel.create(MirroredPair.parse(kind_or_pair), 16, hidden=16)
        model.randomize(rng, 0.5)
        model.quantize = False  # snapping is piecewise constant; check the smooth map
    inst = [sample_instance(rng, np.arange(100), 6) for _ in range(6)]
    pts = rng.uniform(-1, 1, (6, 24, 2))
    tgt = rng.random((6, 24)) < 0.5
    return model, lambda n: transport_loss(model, n, small_embed, inst, small_latents, pts, tgt)


@pytest.mark.parametrize("which", ["max,min", "min,add", "min,mat_prod", "sub,cyclic_add", "mlp_concat", "symmetric"])
def test_loss_grad_check(which, small_embed, small_latents):
    rng = np.random.default_rng(21)
    model, build = _loss_inputs(rng, small_embed, small_latents, which)
    assert dc.grad_check(build, model.params, samples=32, rng=rng) < 1e-4


def test_symmetric_baseline_is_exactly_commutative(rng):
    b = DirectBaseline.create("symmetric", L)
    z1, z2 = rng.normal(size=(2, 1000, L))
    for s in ("meet", "join"):
        assert np.array_equal(baseline_apply(b, s, z1, z2), baseline_apply(b, s, z2, z1))


def test_mlp_concat_has_asymmetry_witness(rng):
    b = DirectBaseline.create("mlp_concat", L)
    z1, z2 = rng.normal(size=(2, L))
    assert not np.array_equal(baseline_apply(b, "meet", z1, z2), baseline_apply(b, "meet", z2, z1))


def test_symmetric_baseline_satisfies_two_laws():
    row = law_row(baseline_realization(DirectBaseline.create("symmetric", 64)), dim=64)
    assert sum(row) == 2 and row[:2] == (True, True)


def test_baseline_kind_validation():
    with pytest.raises(KeyError):
        DirectBaseline.create("transformer", L)
    with pytest.raises(KeyError):
        baseline_apply(DirectBaseline.create("symmetric", L), "xor", np.zeros(L), np.zeros(L))


def _tiny_cfg(**kw):
    return TransportConfig(**{**dict(epochs=2, steps_per_epoch=6, batch_terms=8, batch_points=32,
                                     max_symbols=4, val_terms=16, val_points=64, hidden=16), **kw})


def test_training_leaves_embed_untouched(small_embed, small_ds, small_latents):
    before = small_embed.params.tobytes()
    train_transport(small_embed, small_ds, small_latents, RIESZ_PAIR, _tiny_cfg())
    train_baseline(small_embed, small_ds, small_latents, "symmetric", _tiny_cfg(lr=1e-4))
    assert small_embed.params.tobytes() == before


def test_ell_one_identity_phi_matches_autoencoder(small_embed, small_ds, small_latents):
    from stnet.embed import decode_logits
    from stnet.setgen import batch_membership
    m, hist = train_transport(small_embed, small_ds, small_latents, MirroredPair("min", "add"),
                              _tiny_cfg(epochs=0, max_symbols=1))
    rng = np.random.default_rng([0, 12])
    inst = [sample_instance(rng, small_ds.indices("val"), 1) for _ in range(16)]
    pts = rng.uniform(-1, 1, (16, 64, 2))
    inside, outside = small_ds.padded_points()
    tgt = np.stack([batch_membership(inside[i.sets[0]], outside[i.sets[0]], pts[k]) for k, i in enumerate(inst)])
    z = small_latents[[i.sets[0] for i in inst]]
    assert hist[0]["val_loss"] == pytest.approx(dc.bce_numpy(decode_logits(small_embed, pts, z), tgt), rel=1e-12)


def test_training_improves_validation_loss(small_embed, small_ds, small_latents):
    _, hist = train_transport(small_embed, small_ds, small_latents, MirroredPair("min", "add"),
                              _tiny_cfg(epochs=3, steps_per_epoch=10, lr=3e-3))
    assert min(h["val_loss"] for h in hist[1:]) < hist[0]["val_loss"]


def test_trained_round_trip_and_files(tmp_path, small_embed, small_ds, small_latents, rng):
    m, _ = train_transport(small_embed, small_ds, small_latents, MirroredPair("min", "add"), _tiny_cfg())
    z = _lat(rng, 10_000)
    assert np.array_equal(phi_inverse(m, phi_forward(m, z)), z)
    save_model(m, tmp_path / "t.stnw")
    back = load_model(tmp_path / "t.stnw")
    assert back.pair == m.pair and back.params.tobytes() == m.params.tobytes()
    b = DirectBaseline.create("mlp_concat", L)
    save_model(b, tmp_path / "b.stnw")
    back = load_model(tmp_path / "b.stnw")
    assert back.kind == "mlp_concat" and back.params.tobytes() == b.params.tobytes()


def test_training_deterministic(small_embed, small_ds, small_latents):
    a, _ = train_transport(small_embed, small_ds, small_latents, RIESZ_PAIR, _tiny_cfg(epochs=1))
    b, _ = train_transport(small_embed, small_ds, small_latents, RIESZ_PAIR, _tiny_cfg(epochs=1))
    assert a.params.tobytes() == b.params.tobytes()
