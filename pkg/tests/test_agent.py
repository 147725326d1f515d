import struct

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from rlanimate.agent import (
    DTYPE,
    Agent,
    AgentConfig,
    Checkpoint,
    checkpoint_bytes,
    checkpoint_from_bytes,
    load_checkpoint,
    rest_action,
    rollout,
    save_checkpoint,
)
from rlanimate.errors import ConfigurationError, ContractViolation, NumericFault, VersionMismatch
from rlanimate.kinematics import action_to_rotations, canonical_skeleton
from rlanimate.motion import synth_point_clip, synth_wave_clip
from rlanimate.signals import EFFECTOR_DIM, objective_sequence, rest_description

SK = canonical_skeleton()
TINY = dict(h_dim=8, b_det_dim=8, b_stoch_dim=8, portrayal_hidden_dim=8, decoder_hidden_dim=8, policy_hidden_dim=8)


def tiny(seed=0, **kw):
    return Agent(AgentConfig(**{**TINY, "seed": seed, **kw}))


def t(x):
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)


OBJ = t(objective_sequence(synth_wave_clip(0.6, "right", 12)))


def test_config_validation():
    with pytest.raises(ConfigurationError, match="h_dim"):
        AgentConfig(h_dim=0)
    with pytest.raises(ConfigurationError, match="min_stddev"):
        AgentConfig(min_stddev=0.0)
    with pytest.raises(ConfigurationError, match="variant"):
        AgentConfig(variant="other")
    assert AgentConfig.from_dict(AgentConfig().to_dict()) == AgentConfig()
    with pytest.raises(ConfigurationError):
        AgentConfig.from_dict({"width": 3})


def test_construction_is_seeded_and_leaves_global_rng_alone():
    state = torch.random.get_rng_state()
    a, b = tiny(5), tiny(5)
    assert torch.equal(torch.random.get_rng_state(), state)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    assert any(not torch.equal(va, vb) for va, vb in zip(a.state_dict().values(), tiny(6).state_dict().values()))


def test_portrayal_step_deterministic_and_unit_effectors():
    ag = tiny()
    s0 = ag.initial_state(1).portrayal
    d1, n1 = ag.portrayal_step(OBJ[:1], s0)
    d2, n2 = ag.portrayal_step(OBJ[:1], s0)
    assert torch.equal(d1, d2) and torch.equal(n1, n2)
    blocks = d1[0, :EFFECTOR_DIM].reshape(4, 3)
    np.testing.assert_allclose(blocks.norm(dim=1).detach().numpy(), 1.0, atol=1e-6)
    with pytest.raises(ContractViolation):
        ag.portrayal_step(OBJ[:1], torch.zeros(1, 9, dtype=DTYPE))


def test_task_state_bounded_deterministic_and_causal():
    ag = tiny()
    other = OBJ.clone()
    other[7:, 2:5] = 0.1
    h1 = h2 = torch.zeros(1, 8, dtype=DTYPE)
    for k in range(len(OBJ)):
        h1 = ag.task_state_update(h1, OBJ[k : k + 1])
        h2 = ag.task_state_update(h2, other[k : k + 1])
        assert torch.all(h1.abs() < 1)
        if k < 7:
            assert torch.equal(h1, h2)
    assert not torch.equal(h1, h2)
    h0 = torch.zeros(1, 8, dtype=DTYPE)
    assert torch.equal(ag.task_state_update(h0, OBJ[:1]), ag.task_state_update(h0, OBJ[:1]))


def test_prior_and_posterior_floor_and_sensitivity():
    rng = np.random.default_rng(0)
    for seed in range(10):
        ag = tiny(seed)
        h = t(rng.uniform(-1, 1, (3, 8)))
        b = t(rng.normal(size=(3, 8)))
        a = t(rng.uniform(0, 1, (3, 45)))
        b_det, prior = ag.behaviour_prior(h, b, a)
        b_det2, prior2 = ag.behaviour_prior(h, b, a)
        assert torch.equal(prior.mean, prior2.mean) and torch.equal(prior.std, prior2.std)
        assert torch.all(prior.std >= ag.config.min_stddev)
        moved, _ = ag.behaviour_prior(h, b, t(rng.uniform(0, 1, (3, 45))))
        assert (moved - b_det).abs().max() > 0
        d = t(np.repeat(rest_description()[None], 3, axis=0))
        post = ag.behaviour_posterior(b_det, d)
        assert torch.all(post.std >= ag.config.min_stddev)
        assert torch.equal(post.mean, ag.behaviour_posterior(b_det, d).mean)
        assert (ag.behaviour_posterior(b_det, d + 0.1).mean - post.mean).abs().max() > 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_beta_policy_shapes(seed):
    ag = tiny(seed % 7)
    g = torch.Generator().manual_seed(seed)
    out = ag.animation_step(torch.randn(4, 8, generator=g, dtype=DTYPE) * 3, torch.randn(4, 8, generator=g, dtype=DTYPE) * 3)
    assert torch.all(out.alpha > 1) and torch.all(out.beta > 1)
    assert torch.all((out.mean > 0) & (out.mean < 1))
    assert torch.all((out.mode > 0) & (out.mode < 1))


def test_zeroed_policy_head_gives_half():
    ag = tiny()
    with torch.no_grad():
        ag.policy[-1].weight.zero_()
        ag.policy[-1].bias.zero_()
    out = ag.animation_step(torch.randn(2, 8, dtype=DTYPE), torch.randn(2, 8, dtype=DTYPE))
    expected = 1.0 + torch.nn.functional.softplus(torch.zeros((), dtype=DTYPE))
    assert torch.all(out.alpha == expected) and torch.all(out.beta == expected)
    assert torch.all(out.mean == 0.5)


def test_decoder_shape_and_determinism():
    ag = tiny()
    h, b = torch.randn(3, 8, dtype=DTYPE), torch.randn(3, 8, dtype=DTYPE)
    d = ag.decode_description(h, b)
    assert d.shape == (3, 42)
    assert torch.equal(d, ag.decode_description(h, b))


def test_non_finite_activation_names_tensor():
    ag = tiny()
    with pytest.raises(NumericFault, match="h"):
        ag.task_state_update(torch.zeros(1, 8, dtype=DTYPE), torch.full((1, 6), float("nan"), dtype=DTYPE))


def test_rollout_deterministic_repeatable():
    ag = tiny()
    obj = objective_sequence(synth_point_clip((0.0, 1.0, 0.0), "right", 15))
    e1 = rollout(ag, obj, SK, "deterministic")
    e2 = rollout(ag, obj, SK, "deterministic")
    np.testing.assert_array_equal(e1.a, e2.a)
    np.testing.assert_array_equal(e1.d_real, e2.d_real)


def test_rollout_stochastic_seeding():
    ag = tiny()
    obj = objective_sequence(synth_wave_clip(0.3, "left", 15))
    e1 = rollout(ag, obj, SK, "stochastic", seed=4)
    e2 = rollout(ag, obj, SK, "stochastic", seed=4)
    e3 = rollout(ag, obj, SK, "stochastic", seed=5)
    np.testing.assert_array_equal(e1.a, e2.a)
    assert not np.array_equal(e1.a, e3.a)


@pytest.mark.parametrize("variant", ["full", "single_state", "single_dynamics_space", "supervised_loss"])
def test_rollout_actions_in_range(variant):
    ag = tiny(variant=variant)
    ep = rollout(ag, objective_sequence(synth_wave_clip(0.9, "right", 20)), SK, "stochastic", seed=0)
    assert np.all((ep.a >= 0) & (ep.a <= 1))
    rots = action_to_rotations(SK, ep.a)
    assert np.all((rots >= SK.lower) & (rots <= SK.upper))
    assert ep.d_real.shape == (20, 42)
    assert np.isnan(ep.d_pred).all() == (variant == "single_state")


def test_rollout_reports_step_of_numeric_fault():
    ag = tiny()
    obj = objective_sequence(synth_wave_clip(0.5, "right", 10))
    obj[4, 5] = np.nan
    with pytest.raises(NumericFault) as info:
        rollout(ag, obj, SK)
    assert info.value.step == 4


def test_rollout_rejects_bad_inputs():
    with pytest.raises(ContractViolation):
        rollout(tiny(), np.zeros((0, 6)), SK)
    with pytest.raises(ContractViolation):
        rollout(tiny(), np.zeros((3, 6)), SK, mode="greedy")


def test_rest_action_maps_to_rest_pose():
    np.testing.assert_allclose(action_to_rotations(SK, rest_action(SK)), np.clip(0, SK.lower, SK.upper), atol=1e-15)


def test_single_dynamics_space_has_one_recurrence():
    ag = tiny(variant="single_dynamics_space")
    names = {n.split(".")[0] for n, _ in ag.named_parameters()}
    assert "dynamics_cell" in names and "task_cell" not in names and "behaviour_cell" not in names
    st0 = ag.initial_state(1)
    out = ag.step(OBJ[:1], st0, t(rest_action(SK))[None])
    assert torch.equal(out.state.h, out.state.b_det)


def test_single_state_conditions_on_real_description():
    ag = tiny(variant="single_state")
    st0 = ag.initial_state(1)
    a0 = t(rest_action(SK))[None]
    d0 = t(rest_description())[None]
    out1 = ag.step(OBJ[:1], st0, a0, d0)
    out2 = ag.step(OBJ[:1], st0, a0, d0 + 0.05)
    assert out1.d_hat is None
    assert not torch.equal(out1.posterior.mean, out2.posterior.mean)
    with pytest.raises(ContractViolation):
        ag.step(OBJ[:1], st0, a0, None)


# ---------------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    ag = tiny(3)
    ck = Checkpoint.from_agent(ag, seed=3, train_config={"epochs": 1}, metadata={"note": "x"})
    path = tmp_path / "a.rlack"
    save_checkpoint(ck, path)
    back = load_checkpoint(path)
    assert back.agent_config == ag.config and back.seed == 3 and back.metadata == {"note": "x"}
    rebuilt = back.build_agent()
    for (k, v), (k2, v2) in zip(ag.state_dict().items(), rebuilt.state_dict().items()):
        assert k == k2 and torch.equal(v, v2)
    obj = objective_sequence(synth_wave_clip(0.5, "left", 10))
    np.testing.assert_array_equal(rollout(ag, obj, SK).a, rollout(rebuilt, obj, SK).a)


def test_checkpoint_header_layout():
    data = checkpoint_bytes(Checkpoint.from_agent(tiny(), seed=0))
    assert data[:8] == b"RLACKPT\x00"
    version, hlen = struct.unpack("<IQ", data[8:20])
    assert version == 1
    import json

    header = json.loads(data[20 : 20 + hlen])
    assert header["signal_layout_version"] == "1"
    total = sum(8 * int(np.prod(x["shape"])) for x in header["tensors"])
    assert len(data) == 20 + hlen + total


def test_checkpoint_rejects_corruption():
    ck = Checkpoint.from_agent(tiny(), seed=0)
    with pytest.raises(ContractViolation):
        checkpoint_from_bytes(b"NOTACKPT" + checkpoint_bytes(ck)[8:])
    bad = dict(ck.parameters)
    name = next(iter(bad))
    bad[name] = np.full_like(bad[name], np.nan)
    with pytest.raises(NumericFault, match=name.replace(".", r"\.")):
        Checkpoint(ck.agent_config, bad, 0).build_agent()
    bad[name] = np.zeros((1, 1))
    with pytest.raises(ContractViolation, match="shape"):
        Checkpoint(ck.agent_config, bad, 0).build_agent()


def test_checkpoint_layout_version():
    ck = Checkpoint.from_agent(tiny(), seed=0)
    ck.check_layout("1")
    with pytest.raises(VersionMismatch) as info:
        ck.check_layout("2")
    assert "'1'" in str(info.value) and "'2'" in str(info.value)
