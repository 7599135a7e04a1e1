import json

import numpy as np
import pytest

from bayesalign.experiments import GroundTruth
from bayesalign.geom import PointSet
from bayesalign.model import MatchMatrix
from bayesalign.io import (
    ConfigError,
    DataError,
    LaplaceRunConfig,
    RunConfig,
    SimRunConfig,
    dump_config,
    read_pointset,
    read_truth,
    volume_bounding_box,
    write_pointset,
    write_truth,
)

CONFIGS = __import__("pathlib").Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestPointsetCSV:
    def test_two_points(self, tmp_path):
        ps = read_pointset(write(tmp_path, "a.csv", "id,x,y,z\na,0,0,0\nb,1,0,0\n"))
        assert ps.ids == ("a", "b")
        np.testing.assert_array_equal(ps.points, [[0, 0, 0], [1, 0, 0]])

    def test_empty_body(self, tmp_path):
        with pytest.raises(DataError):
            read_pointset(write(tmp_path, "a.csv", "id,x,y,z\n"))

    @pytest.mark.parametrize(
        "body, line",
        [
            ("a,0,0,0\nb,1,0\n", 3),
            ("a,0,0,0\na,1,0,0\n", 3),
            ("a,0,0,0\nb,1,nan,0\n", 3),
            ("a,0,0,inf\n", 2),
            ("a,0,zero,0\n", 2),
        ],
    )
    def test_errors_carry_line(self, tmp_path, body, line):
        with pytest.raises(DataError, match=f":{line}:"):
            read_pointset(write(tmp_path, "a.csv", "id,x,y,z\n" + body))

    def test_bad_header_and_missing(self, tmp_path):
        with pytest.raises(DataError, match=":1:"):
            read_pointset(write(tmp_path, "a.csv", "name,x,y,z\na,0,0,0\n"))
        with pytest.raises(DataError):
            read_pointset(tmp_path / "nope.csv")

    def test_round_trip_bit_exact(self, tmp_path, rng):
        pts = rng.normal(size=(50, 3)) * 10 ** rng.uniform(-8, 8, (50, 1))
        ps = PointSet(pts, [f"p{i}" for i in range(50)])
        write_pointset(tmp_path / "p.csv", ps)
        back = read_pointset(tmp_path / "p.csv")
        assert back.ids == ps.ids
        assert np.array_equal(back.points, ps.points)
        assert back.points.tobytes() == ps.points.tobytes()


class TestVolume:
    def test_unit_cubes(self):
        cube = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
        assert volume_bounding_box(cube, cube + 5) == 1.0

    def test_per_axis_max(self):
        X = np.array([[0, 0, 0], [2, 1, 1]], dtype=float)
        mu = np.array([[0, 0, 0], [1, 3, 1]], dtype=float)
        assert volume_bounding_box(X, mu) == 6.0

    def test_empty(self):
        with pytest.raises(ValueError):
            volume_bounding_box(np.zeros((0, 3)), np.zeros((1, 3)))


class TestTruth:
    def test_round_trip(self, tmp_path):
        X = PointSet(np.zeros((3, 3)) + np.arange(3)[:, None], ("x0", "x1", "x2"))
        mu = PointSet(np.eye(3), ("m0", "m1", "m2"))
        t = GroundTruth(((0, 2), (1, 0)), (2,))
        write_truth(tmp_path / "t.csv", t, X, mu)
        assert read_truth(tmp_path / "t.csv", X, mu) == t

    def test_unknown_id(self, tmp_path):
        X = PointSet(np.eye(3), ("a", "b", "c"))
        with pytest.raises(DataError, match=":2:"):
            read_truth(write(tmp_path, "t.csv", "x_id,mu_id\nz,a\n"), X, X)


def base_run(**kw):
    d = {"x": "x.csv", "mu": "mu.csv"}
    d.update(kw)
    return d


class TestRunConfig:
    def test_shipped_default_profile(self):
        cfg = RunConfig.load(CONFIGS / "default_run.json")
        m, j = cfg.model, cfg.jumps
        assert (m.alpha0, m.beta0, m.psi, m.mu_gamma, m.sigma_gamma) == (1.0, 36.0, 0.2, [0.0, 0.0, 0.0], 50.0)
        assert (j.sigma_T, j.p_n, j.p_r, j.p_f, j.p_t, j.n_settle, j.n_initialisation) == (
            2.2, 0.001, 0.02, 0.01, 0.09, 850, 1_000_000,
        )
        assert cfg.path("x") == CONFIGS / "data" / "demo_x.csv"

    @pytest.mark.parametrize(
        "d",
        [
            base_run(bogus=1),
            base_run(model={"alpha0": 1, "gamma_shape": 2}),
            base_run(jumps={"p_q": 0.1}),
            base_run(proposal={"p_reject": 0.2, "extra": True}),
            {"x": "x.csv"},
            base_run(n_iter=10, burn_in=10),
            base_run(thin=0),
            base_run(seed=-1),
            base_run(seed=2**64),
            base_run(model_kind="affine"),
            base_run(n_iter=1.5),
            base_run(center="yes"),
            base_run(model={"psi": 2.0}),
            base_run(model={"mu_gamma": [0, 0]}),
            base_run(model_kind="configuration", jumps={}),
            base_run(base_dir="."),
        ],
    )
    def test_strict(self, d):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(d)

    def test_round_trip_canonical(self, tmp_path):
        for name in ("default_run.json", "demo_run.json", "demo_config_run.json", "protein_procrustes.json", "protein_configuration.json"):
            cfg = RunConfig.load(CONFIGS / name)
            canon = cfg.to_dict()
            dump_config(cfg, tmp_path / name)
            again = RunConfig.load(tmp_path / name).to_dict()
            assert again == canon
            assert json.loads((tmp_path / name).read_text()) == canon

    def test_defaults_filled(self):
        cfg = RunConfig.from_dict(base_run())
        d = cfg.to_dict()
        assert d["jumps"] is None and d["model"]["volume_A"] is None and d["proposal"]["width13"] == 0.1
        assert RunConfig.from_dict(d).to_dict() == d

    def test_bad_json(self, tmp_path):
        with pytest.raises(ConfigError, match=":2:"):
            RunConfig.load(write(tmp_path, "c.json", '{\n  "x": ,\n}'))
        with pytest.raises(ConfigError):
            RunConfig.load(write(tmp_path, "c.json", "[1, 2]"))

    def test_estimator_params(self):
        cfg = RunConfig.load(CONFIGS / "default_run.json")
        est = cfg.estimator()
        p = est.get_params()
        assert p["big_jumps"] and p["n_initialisation"] == 1_000_000 and p["beta0"] == 36.0 and p["random_state"] == 0
        c = RunConfig.load(CONFIGS / "demo_config_run.json").estimator()
        assert type(c).__name__ == "ConfigurationMatcher"


class TestOtherConfigs:
    def test_sim_round_trip(self):
        cfg = SimRunConfig.load(CONFIGS / "sim.json")
        assert (cfg.sim.M, cfg.sim.N, cfg.sim.n_ones, cfg.sim.L, cfg.sim.d_min) == (20, 24, 12, 10.0, 2.0)
        assert SimRunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()

    @pytest.mark.parametrize(
        "d",
        [{"sim": {"Q": 1}}, {"s_values": [3.0]}, {"model_kinds": ["x"]}, {"what": 1}, {"sim": {"n_ones": 30}}],
    )
    def test_sim_strict(self, d):
        with pytest.raises(ConfigError):
            SimRunConfig.from_dict(d)

    def test_laplace_round_trip(self):
        cfg = LaplaceRunConfig.load(CONFIGS / "lap.json")
        assert cfg.n_mc == 100_000
        assert LaplaceRunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()

    @pytest.mark.parametrize("d", [{"n_mc": 10}, {"x": "a.csv"}, {"gamma_mode": "mc"}, {"tau": 0}, {"foo": 1}])
    def test_laplace_strict(self, d):
        with pytest.raises(ConfigError):
            LaplaceRunConfig.from_dict(d)


class TestReadMatch:
    def test_from_threshold_file(self, tmp_path):
        from bayesalign.io import read_match, write_threshold_match

        X = PointSet(np.zeros((3, 3)), ["a", "b", "c"])
        mu = PointSet(np.zeros((2, 3)), ["u", "v"])
        lam = MatchMatrix(np.array([1, -1, 0]), 2)
        probs = np.full((3, 3), 1 / 3)
        write_threshold_match(tmp_path / "t.csv", lam, probs, X.ids, mu.ids)
        np.testing.assert_array_equal(read_match(tmp_path / "t.csv", X, mu).assign, lam.assign)
        (tmp_path / "p.csv").write_text("x_id,mu_id\nc,u\n")
        np.testing.assert_array_equal(read_match(tmp_path / "p.csv", X, mu).assign, [-1, -1, 0])

    @pytest.mark.parametrize(
        "body, msg",
        [("x,mu\n", ":1:"), ("x_id,mu_id\nq,u\n", ":2: unknown X"), ("x_id,mu_id\na,w\n", "unknown mu"),
         ("x_id,mu_id\na,u\na,v\n", ":3: duplicate"), ("x_id,mu_id\na\n", "at least 2")],
    )
    def test_errors(self, tmp_path, body, msg):
        from bayesalign.io import read_match

        X = PointSet(np.zeros((3, 3)), ["a", "b", "c"])
        mu = PointSet(np.zeros((2, 3)), ["u", "v"])
        (tmp_path / "m.csv").write_text(body)
        with pytest.raises(DataError, match=msg):
            read_match(tmp_path / "m.csv", X, mu)
        with pytest.raises(DataError, match="cannot open"):
            read_match(tmp_path / "missing.csv", X, mu)
