import numpy as np
import numpy.testing as npt
import pytest

from lamarl import envs


def onehot(n, i):
    v = np.zeros(n)
    v[i] = 1.0
    return v


# ---------------------------------------------------------------------------
# iterated rotational game
# ---------------------------------------------------------------------------

def irg_table_expectation(a1, a2):
    """Brute-force expectation over the four discrete outcomes."""
    r1 = r2 = 0.0
    for i, p1 in ((0, a1), (1, 1.0 - a1)):
        for j, p2 in ((0, a2), (1, 1.0 - a2)):
            c1, c2 = envs.IRG_TABLE[i][j]
            r1 += p1 * p2 * c1
            r2 += p1 * p2 * c2
    return r1, r2


def test_irg_pure_action_corners():
    assert envs.irg_step(1.0, 1.0) == (0.0, 3.0)
    assert envs.irg_step(0.0, 0.0) == (2.0, 1.0)


def test_irg_uniform_actions():
    assert envs.irg_step(0.5, 0.5) == (1.5, 1.5)


def test_irg_closed_form_matches_table_expectation():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a1, a2 = rng.random(), rng.random()
        r1, r2 = envs.irg_step(a1, a2)
        e1, e2 = irg_table_expectation(a1, a2)
        assert abs(r1 - e1) <= 1e-12 and abs(r2 - e2) <= 1e-12


def test_irg_fixed_point_gradients_vanish():
    # closed-form partials: dr1/da1 = 1 - 2*a2, dr2/da2 = 2*a1 - 1
    assert 1.0 - 2.0 * 0.5 == 0.0 and 2.0 * 0.5 - 1.0 == 0.0
    h = 1e-6
    d1 = envs.irg_step(0.5 + h, 0.5)[0] - envs.irg_step(0.5 - h, 0.5)[0]
    d2 = envs.irg_step(0.5, 0.5 + h)[1] - envs.irg_step(0.5, 0.5 - h)[1]
    assert abs(d1) <= 1e-12 and abs(d2) <= 1e-12


def test_irg_out_of_range_actions_clamped():
    assert envs.irg_step(2.0, -1.0) == envs.irg_step(1.0, 0.0)
    env = envs.IteratedRotationalGame(horizon=3)
    env.reset(np.random.default_rng(0))
    env.step([np.array([1.7]), np.array([0.5])])
    assert env.clamped == 1


# ---------------------------------------------------------------------------
# iterated prisoner's dilemma
# ---------------------------------------------------------------------------

def test_ipd_reward_table():
    assert envs.ipd_rewards(0, 0) == (-1.0, -1.0)
    assert envs.ipd_rewards(0, 1) == (-3.0, 0.0)
    assert envs.ipd_rewards(1, 0) == (0.0, -3.0)
    assert envs.ipd_rewards(1, 1) == (-3.0, -3.0)
    assert envs.ipd_rewards(1, 1, dd_reward=-2.0) == (-2.0, -2.0)


def test_ipd_reset_is_initial_state():
    env = envs.IteratedPrisonersDilemma()
    obs = env.reset(np.random.default_rng(0))
    npt.assert_array_equal(obs[0], onehot(5, 0))
    npt.assert_array_equal(obs[1], onehot(5, 0))


def test_ipd_transitions_encode_joint_action():
    env = envs.IteratedPrisonersDilemma(horizon=10)
    env.reset(np.random.default_rng(0))
    res = env.step([onehot(2, 0), onehot(2, 0)])
    npt.assert_array_equal(res.obs[0], onehot(5, 1))  # CC
    npt.assert_array_equal(res.rewards, [-1.0, -1.0])
    res = env.step([onehot(2, 1), onehot(2, 1)])
    npt.assert_array_equal(res.obs[0], onehot(5, 4))  # DD
    npt.assert_array_equal(res.rewards, [-3.0, -3.0])
    res = env.step([onehot(2, 0), onehot(2, 1)])
    npt.assert_array_equal(res.obs[0], onehot(5, 2))  # CD
    npt.assert_array_equal(res.rewards, [-3.0, 0.0])


def test_ipd_tft_self_play_rollout():
    # tit-for-tat against itself cooperates forever from the initial state
    env = envs.IteratedPrisonersDilemma(horizon=150)
    obs = env.reset(np.random.default_rng(0))
    last = (0, 0)  # TFT opens with cooperation
    for t in range(150):
        a1 = onehot(2, last[1] if t else 0)
        a2 = onehot(2, last[0] if t else 0)
        res = env.step([a1, a2])
        npt.assert_array_equal(res.rewards, [-1.0, -1.0])
        last = (int(np.argmax(a1)), int(np.argmax(a2)))
    assert res.terminal
    assert env.episode_summary()["coop_rate"] == 1.0


def test_ipd_transition_deterministic_and_chain_closed():
    env = envs.IteratedPrisonersDilemma(horizon=1000)
    env.reset(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for _ in range(200):
        res = env.step([onehot(2, rng.integers(2)), onehot(2, rng.integers(2))])
        assert res.obs[0].sum() == 1.0
        assert int(np.argmax(res.obs[0])) in (1, 2, 3, 4)


def test_ipd_relaxed_actions_argmaxed():
    env = envs.IteratedPrisonersDilemma(horizon=5)
    env.reset(np.random.default_rng(0))
    res = env.step([np.array([0.9, 0.1]), np.array([0.2, 0.8])])
    npt.assert_array_equal(res.obs[0], onehot(5, 2))  # argmax -> (C, D)


# ---------------------------------------------------------------------------
# particle-coordination game
# ---------------------------------------------------------------------------

def stay():
    return onehot(5, 4)


def place(env, p1, p2):
    env.pos = np.array([p1, p2], dtype=np.float64)
    env.vel = np.zeros((2, 2))


def test_pcg_same_green_pays_table_entry():
    env = envs.ParticleCoordinationGame()
    env.reset(np.random.default_rng(0))
    place(env, envs.PCG_LANDMARKS[0], envs.PCG_LANDMARKS[0])
    res = env.step([stay(), stay()])
    npt.assert_allclose(res.rewards, [2.0, 2.0])


def test_pcg_split_greens_pay_penalty():
    env = envs.ParticleCoordinationGame()
    env.reset(np.random.default_rng(0))
    place(env, envs.PCG_LANDMARKS[0], envs.PCG_LANDMARKS[2])
    res = env.step([stay(), stay()])
    npt.assert_allclose(res.rewards, [-20.0, -20.0])


def test_pcg_both_gray_pay_local_optimum():
    env = envs.ParticleCoordinationGame()
    env.reset(np.random.default_rng(0))
    place(env, envs.PCG_LANDMARKS[1], envs.PCG_LANDMARKS[1])
    res = env.step([stay(), stay()])
    npt.assert_allclose(res.rewards, [0.4, 0.4])


def test_pcg_table_symmetric():
    npt.assert_array_equal(envs.PCG_TABLE, envs.PCG_TABLE.T)


def test_pcg_reset_seeding():
    env = envs.ParticleCoordinationGame()
    o1 = env.reset(np.random.default_rng(7))
    p1 = env.pos.copy()
    env.reset(np.random.default_rng(7))
    npt.assert_array_equal(env.pos, p1)
    env.reset(np.random.default_rng(8))
    assert not np.array_equal(env.pos, p1)
    assert o1[0].shape == (10,)


def test_pcg_observation_layout_excludes_other_agent():
    env = envs.ParticleCoordinationGame()
    env.reset(np.random.default_rng(0))
    place(env, [0.1, 0.2], [-0.3, 0.4])
    obs = env._obs()
    npt.assert_allclose(obs[0][:2], [0.0, 0.0])           # velocity
    npt.assert_allclose(obs[0][2:4], [0.1, 0.2])          # own position
    npt.assert_allclose(obs[0][4:6], envs.PCG_LANDMARKS[0] - [0.1, 0.2])
    # moving the other agent leaves an agent's observation untouched
    before = obs[0].copy()
    place(env, [0.1, 0.2], [0.9, -0.9])
    npt.assert_array_equal(env._obs()[0], before)


def test_pcg_dynamics_move_agent():
    env = envs.ParticleCoordinationGame()
    env.reset(np.random.default_rng(0))
    place(env, [0.0, 0.0], [0.0, 0.0])
    env.step([onehot(5, 0), onehot(5, 1)])  # right, left
    assert env.pos[0][0] > 0 and env.pos[1][0] < 0
    assert env.pos[0][1] == 0.0


# ---------------------------------------------------------------------------
# exit room level 1
# ---------------------------------------------------------------------------

def test_exit_room_reward_cases():
    w = envs.EXITROOM_WIDTH
    assert envs.exit_room_reward(w, w) == pytest.approx(2 * envs.EXITROOM_LAMBDA_C)
    assert envs.exit_room_reward(0, 0) == pytest.approx(envs.EXITROOM_LAMBDA_D)
    assert envs.exit_room_reward(w, 0) == pytest.approx(0.5)


def test_exit_room_walls_clamp():
    env = envs.ExitRoomLevel1(horizon=40)
    env.reset(np.random.default_rng(0))
    for _ in range(20):
        env.step([onehot(3, 0), onehot(3, 1)])  # left, right
    assert env.pos[0] == 0 and env.pos[1] == envs.EXITROOM_WIDTH


def test_exit_room_reset_centers():
    env = envs.ExitRoomLevel1()
    obs = env.reset(np.random.default_rng(0))
    npt.assert_allclose(obs[0], [0.5, 0.5], atol=1e-9)


# ---------------------------------------------------------------------------
# shared contract
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(envs.ENV_BUILDERS))
def test_episodes_terminate_exactly_at_horizon(name):
    env = envs.make_env(name, horizon=7)
    rng = np.random.default_rng(0)
    env.reset(rng)
    for t in range(7):
        acts = [np.abs(rng.random(d)) for d in env.spec.act_dims]
        res = env.step(acts)
        assert res.terminal == (t == 6)
        assert np.isfinite(res.rewards).all()
        assert len(res.obs) == env.spec.n_agents


def test_registry_rejects_unknown():
    with pytest.raises(ValueError):
        envs.make_env("pong")


def test_env_spec_validation():
    with pytest.raises(ValueError):
        envs.EnvSpec(2, (1,), (1,), "continuous", 0, False)
