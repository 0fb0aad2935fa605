"""File formats and the command-line entry points."""
import numpy as np
import pytest

from dualsir.model import FixedConstants
from dualsir.filtering import AuxParams, Dataset
from dualsir.sampler import geometric_ladder
from dualsir.ssa import generate_synthetic_dataset
from dualsir import io
from dualsir.io import InputError
from dualsir.cli import main
from tests.conftest import operating_point


# ------------------------------------------------------------------ config

def test_read_config_defaults(tmp_path):
    path = tmp_path / "empty.ini"
    path.write_text("")
    cfg = io.read_config(path)
    assert cfg.constants.omega == 2_585_518.0
    assert cfg.sampler.n_chains == 8
    assert cfg.sampler.n_iter == 200_000
    assert cfg.sampler.n_adapt == 100_000
    assert cfg.sampler.thin == 10
    assert cfg.use_virological is True
    np.testing.assert_allclose(cfg.sampler.ladder, geometric_ladder(8, 50.0))


def test_read_config_overrides(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "[constants]\nomega = 20000\nomega_c = 10000\n"
        "[sampler]\nchains = 3\niterations = 500\nadapt = 100\n"
        "ladder = 1, 2, 4\nthin = 2\nseed = 7\nuse_virological = false\n"
        "[priors]\nbeta_shape = 15\n"
        "[integrator]\nrel_tol = 1e-6\n")
    cfg = io.read_config(path)
    assert cfg.constants.omega == 20_000.0
    assert cfg.sampler.n_chains == 3
    np.testing.assert_allclose(cfg.sampler.ladder, [1.0, 2.0, 4.0])
    assert cfg.sampler.seed == 7
    assert cfg.use_virological is False
    assert cfg.priors.beta_shape == 15.0
    assert cfg.priors.beta_scale == 3.0        # untouched default
    assert cfg.integrator.rel_tol == 1e-6


def test_read_config_geometric_ladder_syntax(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[sampler]\nchains = 4\nladder = geometric:30\n")
    cfg = io.read_config(path)
    np.testing.assert_allclose(cfg.sampler.ladder, geometric_ladder(4, 30.0))


def test_read_config_rejections(tmp_path):
    cases = {
        "section.ini": "[plotting]\ncolor = red\n",
        "key.ini": "[sampler]\nn_chains = 4\n",
        "value.ini": "[sampler]\nchains = four\n",
        "bool.ini": "[sampler]\nuse_virological = maybe\n",
    }
    for name, text in cases.items():
        path = tmp_path / name
        path.write_text(text)
        with pytest.raises(InputError):
            io.read_config(path)
    with pytest.raises(InputError):
        io.read_config(tmp_path / "missing.ini")


# ------------------------------------------------------------- params file

def _write_params(path, theta, tau):
    x0 = ",".join(str(int(v)) for v in theta.x0)
    path.write_text(
        "[kinetic]\n"
        f"beta1 = {theta.beta1}\nbeta2 = {theta.beta2}\n"
        f"sigma1 = {theta.sigma1}\nsigma2 = {theta.sigma2}\n"
        f"c0 = {theta.c0}\nx0 = {x0}\n"
        "[aux]\n"
        f"c = {tau.c}\nnu = {tau.nu}\nr = {tau.r}\n"
        f"sigma_obs = {tau.sigma_obs}\nv = {tau.v}\n")


def test_params_file_round_trip(tmp_path, constants, op_params):
    theta, tau = op_params
    path = tmp_path / "truth.ini"
    _write_params(path, theta, tau)
    theta2, tau2 = io.read_params_file(path, constants)
    assert theta2.beta1 == theta.beta1
    np.testing.assert_array_equal(theta2.x0, theta.x0)
    assert tau2.nu == tau.nu
    assert tau2.kappa == theta.c0


def test_params_file_errors(tmp_path, constants, op_params):
    theta, tau = op_params
    path = tmp_path / "p.ini"
    path.write_text("[kinetic]\nbeta1 = 65\n")
    with pytest.raises(InputError, match="missing"):
        io.read_params_file(path, constants)
    _write_params(path, theta, tau)
    no_aux = path.read_text().split("[aux]")[0]
    path.write_text(no_aux)
    with pytest.raises(InputError, match=r"missing section \[aux\]"):
        io.read_params_file(path, constants)
    _write_params(path, theta, tau)
    text = path.read_text().replace("beta2", "betaX")
    path.write_text(text)
    with pytest.raises(InputError):
        io.read_params_file(path, constants)
    # population total must match the configured size
    _write_params(path, theta, tau)
    bad = path.read_text().replace(f"x0 = {int(theta.x0[0])}",
                                   f"x0 = {int(theta.x0[0]) + 5}")
    path.write_text(bad)
    with pytest.raises(InputError):
        io.read_params_file(path, constants)


# --------------------------------------------------------------- data files

def test_data_round_trip(tmp_path, constants, op_params):
    theta, tau = op_params
    data, _ = generate_synthetic_dataset(theta, tau, constants, 12, 4)
    path = tmp_path / "data.csv"
    io.write_data(data, path)
    back = io.read_data(path, constants)
    np.testing.assert_array_equal(back.y, data.y)
    np.testing.assert_array_equal(back.n1, data.n1)
    np.testing.assert_array_equal(back.times, data.times)


def test_data_missing_virology_round_trip(tmp_path, constants):
    path = tmp_path / "data.csv"
    path.write_text("week,y,n1,n2,n3\n1,10,1,2,3\n2,12,,,\n3,9,0,0,5\n")
    data = io.read_data(path, constants)
    assert np.isnan(data.n1[1]) and np.isnan(data.n3[1])
    assert data.n3[2] == 5.0
    io.write_data(data, tmp_path / "copy.csv")
    assert (tmp_path / "copy.csv").read_text() == path.read_text()


@pytest.mark.parametrize("body, line", [
    ("weeks,y,n1,n2,n3\n1,10,,,\n2,11,,,\n", 1),     # bad header
    ("week,y,n1,n2,n3\n1,10,,,\n2,11,1,2\n", 3),     # wrong field count
    ("week,y,n1,n2,n3\n1,-4,,,\n2,11,,,\n", 2),      # negative y
    ("week,y,n1,n2,n3\n1,10,1,,3\n2,11,,,\n", 2),    # partially blank tests
    ("week,y,n1,n2,n3\n1,3.5,,,\n2,11,,,\n", 2),     # non-integer count
])
def test_data_diagnostics_carry_line_numbers(tmp_path, constants, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(InputError, match=f":{line}"):
        io.read_data(path, constants)


def test_data_structural_rejections(tmp_path, constants):
    path = tmp_path / "bad.csv"
    path.write_text("week,y,n1,n2,n3\n1,10,,,\n3,11,,,\n")
    with pytest.raises(InputError, match="contiguous"):
        io.read_data(path, constants)
    path.write_text("week,y,n1,n2,n3\n1,10,,,\n")
    with pytest.raises(InputError, match="at least 2"):
        io.read_data(path, constants)


# ----------------------------------------------------------------- archives

class _FakeArchive:
    def __init__(self, n, rng):
        self.n_draws = n
        self.iterations = np.arange(100, 100 + 10 * n, 10)
        self.seeds = rng.integers(0, 2 ** 63, size=n).astype(np.uint64)
        self.log_post = rng.standard_normal(n) * 100


def test_archive_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    arc = _FakeArchive(20, rng)
    params = np.exp(rng.standard_normal((20, 18)) * 3)
    path = tmp_path / "samples.csv"
    io.write_archive(arc, params, path)
    p2, lp2, seeds2, iters2 = io.read_archive(path)
    # 17 significant digits round-trip doubles exactly
    np.testing.assert_array_equal(p2, params)
    np.testing.assert_array_equal(lp2, arc.log_post)
    np.testing.assert_array_equal(seeds2, arc.seeds)
    np.testing.assert_array_equal(iters2, arc.iterations)


def test_archive_rejects_corruption(tmp_path):
    path = tmp_path / "samples.csv"
    path.write_text("not,an,archive\n1,2,3\n")
    with pytest.raises(InputError):
        io.read_archive(path)
    arc = _FakeArchive(2, np.random.default_rng(1))
    io.write_archive(arc, np.ones((2, 18)), path)
    lines = path.read_text().splitlines()
    cells = lines[1].split(",")
    cells[2] = "oops"
    lines[1] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(InputError, match="corrupt"):
        io.read_archive(path)


def test_summarize_single_draw_degenerate():
    params = np.arange(18.0)[None, :]
    rows = io.summarize_archive(params, np.array([-3.0]))
    for j, (name, mapv, lo, hi) in enumerate(rows):
        assert mapv == lo == hi == float(j)
    assert rows[0][0] == "beta1" and rows[5][0] == "Sigma"
    assert rows[10][0] == "X_SS" and rows[17][0] == "X_RR"


def test_summarize_interval_matches_percentiles():
    rng = np.random.default_rng(3)
    params = rng.standard_normal((10_000, 18)) + np.arange(18)
    lp = rng.standard_normal(10_000)
    rows = io.summarize_archive(params, lp)
    best = int(np.argmax(lp))
    for j, (_, mapv, lo, hi) in enumerate(rows):
        assert mapv == params[best, j]
        assert lo == pytest.approx(j - 1.96, abs=0.08)
        assert hi == pytest.approx(j + 1.96, abs=0.08)


def test_atomic_write_replaces_without_leftovers(tmp_path):
    path = tmp_path / "out.txt"
    io.atomic_write_text(path, "one\n")
    io.atomic_write_text(path, "two\n")
    assert path.read_text() == "two\n"
    assert list(tmp_path.iterdir()) == [path]


# --------------------------------------------------------------------- CLI

SMALL_OMEGA = 20_000.0


def _small_config(path, **sampler):
    lines = ["[constants]", f"omega = {SMALL_OMEGA:g}", "omega_c = 10000",
             "r_h = 0.02", "[sampler]"]
    defaults = dict(chains=2, iterations=60, adapt=30, thin=5, seed=0)
    defaults.update(sampler)
    for key, val in defaults.items():
        lines.append(f"{key} = {val}")
    path.write_text("\n".join(lines) + "\n")


def _small_params(path):
    k = FixedConstants(omega=SMALL_OMEGA, omega_c=10_000.0, r_h=0.02)
    theta, tau = operating_point(k)
    _write_params(path, theta, tau)


def test_cli_simulate_outputs_and_determinism(tmp_path):
    cfg = tmp_path / "run.ini"
    par = tmp_path / "truth.ini"
    _small_config(cfg)
    _small_params(par)
    code = main(["simulate", "--config", str(cfg), "--params", str(par),
                 "--weeks", "8", "--out", str(tmp_path / "a")])
    assert code == 0
    data_a = (tmp_path / "a" / "data.csv").read_text()
    assert len(data_a.strip().splitlines()) == 9
    assert (tmp_path / "a" / "truth.csv").exists()
    main(["simulate", "--config", str(cfg), "--params", str(par),
          "--weeks", "8", "--out", str(tmp_path / "b")])
    assert (tmp_path / "b" / "data.csv").read_text() == data_a
    # a different master seed changes the realization
    main(["simulate", "--config", str(cfg), "--params", str(par),
          "--weeks", "8", "--seed", "1", "--out", str(tmp_path / "c")])
    assert (tmp_path / "c" / "data.csv").read_text() != data_a


def test_cli_fit_and_summarize_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    par = tmp_path / "truth.ini"
    _small_config(cfg)
    _small_params(par)
    assert main(["simulate", "--config", str(cfg), "--params", str(par),
                 "--weeks", "8", "--out", str(tmp_path / "sim")]) == 0
    fit_dir = tmp_path / "fit"
    code = main(["fit", "--config", str(cfg),
                 "--data", str(tmp_path / "sim" / "data.csv"),
                 "--out", str(fit_dir)])
    assert code == 0
    for name in ("samples.csv", "summary.csv", "trajectories.csv",
                 "predictive.csv", "meta.txt"):
        assert (fit_dir / name).exists()
    params, lp, seeds, iters = io.read_archive(fit_dir / "samples.csv")
    assert params.shape == (6, 18)          # (60 - 30) / 5 kept draws
    assert np.all(params[:, :6] > 0)
    np.testing.assert_allclose(params[:, 10:].sum(axis=1), SMALL_OMEGA,
                               rtol=1e-9)
    meta = (fit_dir / "meta.txt").read_text()
    assert "draws = 6" in meta and "seed = 0" in meta

    # summarize recomputes the identical table from the archive alone
    sum_dir = tmp_path / "sum"
    assert main(["summarize", "--config", str(cfg),
                 "--archive", str(fit_dir / "samples.csv"),
                 "--out", str(sum_dir)]) == 0
    assert (sum_dir / "summary.csv").read_text() \
        == (fit_dir / "summary.csv").read_text()
    out = capsys.readouterr().out
    assert "beta1" in out and "95% CI" in out
    # and is idempotent byte for byte
    sum2 = tmp_path / "sum2"
    main(["summarize", "--config", str(cfg),
          "--archive", str(fit_dir / "samples.csv"), "--out", str(sum2)])
    assert (sum2 / "summary.csv").read_bytes() \
        == (sum_dir / "summary.csv").read_bytes()


def test_cli_fit_reruns_identically(tmp_path):
    cfg = tmp_path / "run.ini"
    par = tmp_path / "truth.ini"
    _small_config(cfg)
    _small_params(par)
    main(["simulate", "--config", str(cfg), "--params", str(par),
          "--weeks", "6", "--out", str(tmp_path / "sim")])
    for d in ("f1", "f2"):
        assert main(["fit", "--config", str(cfg),
                     "--data", str(tmp_path / "sim" / "data.csv"),
                     "--out", str(tmp_path / d)]) == 0
    for name in ("samples.csv", "summary.csv", "trajectories.csv",
                 "predictive.csv"):
        assert (tmp_path / "f1" / name).read_bytes() \
            == (tmp_path / "f2" / name).read_bytes()


def test_cli_input_errors_exit_code_2(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    _small_config(cfg)
    bad_data = tmp_path / "bad.csv"
    bad_data.write_text("week,y\n1,2\n")
    assert main(["fit", "--config", str(cfg), "--data", str(bad_data),
                 "--out", str(tmp_path / "o")]) == 2
    assert "error:" in capsys.readouterr().err
    broken_cfg = tmp_path / "broken.ini"
    broken_cfg.write_text("[sampler]\nchains = four\n")
    par = tmp_path / "truth.ini"
    _small_params(par)
    assert main(["simulate", "--config", str(broken_cfg),
                 "--params", str(par), "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--config", str(cfg), "--params", str(par),
                 "--weeks", "1", "--out", str(tmp_path / "o")]) == 2


def test_cli_numerical_failure_exit_code_3(tmp_path, capsys):
    # a one-step integrator budget makes every likelihood evaluation
    # diverge, so chain initialization cannot find a finite posterior
    cfg = tmp_path / "run.ini"
    cfg.write_text("[constants]\nomega = 20000\nomega_c = 10000\nr_h = 0.02\n"
                   "[sampler]\nchains = 1\niterations = 10\nadapt = 5\n"
                   "[integrator]\nmax_steps = 1\n")
    sim_cfg = tmp_path / "sim.ini"
    _small_config(sim_cfg)
    par = tmp_path / "truth.ini"
    _small_params(par)
    main(["simulate", "--config", str(sim_cfg), "--params", str(par),
          "--weeks", "6", "--out", str(tmp_path / "sim")])
    code = main(["fit", "--config", str(cfg),
                 "--data", str(tmp_path / "sim" / "data.csv"),
                 "--out", str(tmp_path / "fit")])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err
