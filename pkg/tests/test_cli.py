import csv
import json

import numpy as np
import pytest

from sfpl import standardize_covariates
from sfpl.cli import main

from conftest import scipy_mle


@pytest.fixture
def inputs(tmp_path):
    """Well-behaved two-group dataset written to disk."""
    rng = np.random.default_rng(12)
    M, p = 10, 3
    X = rng.normal(size=(M, p))
    labels = [f"v{i}" for i in range(M)]
    cov = tmp_path / "cov.csv"
    with open(cov, "w") as fh:
        fh.write("object,a,b,c\n")
        for lab, row in zip(labels, X):
            fh.write(lab + "," + ",".join(repr(float(v)) for v in row) + "\n")
    beta = np.array([[1.0, -0.8, 0.0], [0.2, -0.8, 0.6]])
    rank = tmp_path / "rank.csv"
    with open(rank, "w") as fh:
        fh.write("group,ranker,position,object\n")
        for k, group in enumerate(("men", "women")):
            worth = np.exp(X @ beta[k])
            for r in range(40):
                subset = rng.choice(M, size=3, replace=False)
                w = worth[subset].copy()
                order = []
                for _ in range(3):
                    pick = rng.choice(len(subset), p=w / w.sum())
                    order.append(int(subset[pick]))
                    w[pick] = 0.0
                for pos, obj in enumerate(order, start=1):
                    fh.write(f"{group},r{r},{pos},{labels[obj]}\n")
    return rank, cov


def read_coefficients(path):
    rows = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            rows[(row["group"], row["variable"])] = (
                float(row["beta_std"]),
                float(row["beta_raw"]),
            )
    return rows


class TestValidate:
    def test_ok_inputs_exit_zero(self, inputs, capsys):
        rank, cov = inputs
        code = main(["validate", "--rankings", str(rank), "--covariates", str(cov)])
        assert code == 0
        out = capsys.readouterr().out
        assert "rank 3 of p=3 -> PASS" in out

    def test_schema_violation_exit_two(self, tmp_path, inputs):
        _, cov = inputs
        bad = tmp_path / "bad.csv"
        bad.write_text("group,ranker,position,object\ng,1,1,v0\ng,1,1,v1\n")
        code = main(["validate", "--rankings", str(bad), "--covariates", str(cov)])
        assert code == 2


class TestFit:
    def test_unpenalized_fit_matches_oracle(self, inputs, tmp_path):
        rank, cov = inputs
        out = tmp_path / "fit0"
        code = main(
            ["fit", "--rankings", str(rank), "--covariates", str(cov),
             "--lambda-s", "0", "--lambda-f", "0", "--out", str(out)]
        )
        assert code == 0
        assert sorted(p.name for p in out.iterdir()) == [
            "coefficients.csv", "fit.json", "manifest.json",
        ]
        # reconstruct the standardized design and compare to the scipy oracle
        from sfpl import load_covariates, load_rankings

        catalog, X_raw = load_covariates(cov)
        data = load_rankings(rank, catalog)
        X = standardize_covariates(X_raw)
        ref = scipy_mle(data, X)
        coef = read_coefficients(out / "coefficients.csv")
        for k, group in enumerate(("men", "women")):
            for q, var in enumerate(("a", "b", "c")):
                std, raw = coef[(group, var)]
                assert abs(std - ref[k, q]) < 1e-6
                assert raw == pytest.approx(std / X.column_sds[q])

    def test_negative_lambda_names_flag(self, inputs, tmp_path, capsys):
        rank, cov = inputs
        code = main(
            ["fit", "--rankings", str(rank), "--covariates", str(cov),
             "--lambda-s", "-1", "--lambda-f", "0", "--out", str(tmp_path / "x")]
        )
        assert code == 2
        assert "--lambda-s" in capsys.readouterr().err

    def test_rank_deficient_is_exit_three(self, inputs, tmp_path):
        rank, cov = inputs
        dup = tmp_path / "dup.csv"
        lines = cov.read_text().splitlines()
        header = lines[0] + ",a_copy"
        rows = [
            line + "," + line.split(",")[1] for line in lines[1:]
        ]
        dup.write_text("\n".join([header] + rows) + "\n")
        args = ["fit", "--rankings", str(rank), "--covariates", str(dup),
                "--no-standardize",
                "--lambda-s", "0.5", "--lambda-f", "0", "--out", str(tmp_path / "y")]
        assert main(args) == 3
        assert main(args + ["--force"]) == 0

    def test_nonconvergence_exit_four_still_writes(self, inputs, tmp_path):
        rank, cov = inputs
        out = tmp_path / "short"
        code = main(
            ["fit", "--rankings", str(rank), "--covariates", str(cov),
             "--lambda-s", "1", "--lambda-f", "1",
             "--max-iter", "1", "--xi", "1e-14", "--out", str(out)]
        )
        assert code == 4
        payload = json.loads((out / "fit.json").read_text())
        assert payload["converged"] is False


class TestSelect:
    def test_single_cell_grid_equals_unpenalized_fit(self, inputs, tmp_path):
        rank, cov = inputs
        a = tmp_path / "sel"
        b = tmp_path / "fit"
        assert main(
            ["select", "--rankings", str(rank), "--covariates", str(cov),
             "--criterion", "bic", "--grid-s", "0", "--grid-f", "0",
             "--out", str(a)]
        ) == 0
        assert main(
            ["fit", "--rankings", str(rank), "--covariates", str(cov),
             "--lambda-s", "0", "--lambda-f", "0", "--out", str(b)]
        ) == 0
        assert (a / "coefficients.csv").read_text() == (b / "coefficients.csv").read_text()
        chosen = json.loads((a / "selection.json").read_text())
        assert chosen["lambda_s"] == 0.0 and chosen["lambda_f"] == 0.0

    def test_ic_table_has_multiple_df_values(self, inputs, tmp_path):
        rank, cov = inputs
        out = tmp_path / "sel2"
        assert main(
            ["select", "--rankings", str(rank), "--covariates", str(cov),
             "--criterion", "bic", "--grid-size-s", "6", "--grid-size-f", "2",
             "--out", str(out)]
        ) == 0
        with open(out / "ic_table.csv") as fh:
            dfs = {row["df"] for row in csv.DictReader(fh)}
        assert len(dfs) >= 2

    def test_bic_not_less_sparse_than_aic(self, inputs, tmp_path):
        rank, cov = inputs
        dfs = {}
        for criterion in ("aic", "bic"):
            out = tmp_path / criterion
            assert main(
                ["select", "--rankings", str(rank), "--covariates", str(cov),
                 "--criterion", criterion, "--grid-size-s", "5",
                 "--grid-size-f", "2", "--out", str(out)]
            ) == 0
            table = json.loads((out / "fit.json").read_text())
            dfs[criterion] = table["df"]
        assert dfs["bic"] <= dfs["aic"]


class TestPredict:
    def run_fit(self, inputs, tmp_path):
        rank, cov = inputs
        out = tmp_path / "base_fit"
        assert main(
            ["fit", "--rankings", str(rank), "--covariates", str(cov),
             "--lambda-s", "0.1", "--lambda-f", "0.1", "--out", str(out)]
        ) == 0
        return out

    def test_rank_table_written(self, inputs, tmp_path):
        fit_dir = self.run_fit(inputs, tmp_path)
        new = tmp_path / "new.csv"
        new.write_text("object,a,b,c\nfresh,0.1,0.2,0.3\n")
        out = tmp_path / "pred"
        assert main(
            ["predict", "--fit-dir", str(fit_dir), "--new-covariates", str(new),
             "--out", str(out)]
        ) == 0
        with open(out / "rank_table.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 * 11
        flagged = {r["object"] for r in rows if r["predicted_only"] == "true"}
        assert flagged == {"fresh"}
        for group in ("men", "women"):
            ranks = sorted(int(r["rank"]) for r in rows if r["group"] == group)
            assert ranks == list(range(1, 12))

    def test_duplicate_label_rejected(self, inputs, tmp_path):
        fit_dir = self.run_fit(inputs, tmp_path)
        new = tmp_path / "new.csv"
        new.write_text("object,a,b,c\nv0,0.1,0.2,0.3\n")
        assert main(
            ["predict", "--fit-dir", str(fit_dir), "--new-covariates", str(new),
             "--out", str(tmp_path / "p2")]
        ) == 2

    def test_unknown_variable_columns_rejected(self, inputs, tmp_path):
        fit_dir = self.run_fit(inputs, tmp_path)
        new = tmp_path / "new.csv"
        new.write_text("object,a,b,zzz\nfresh,0.1,0.2,0.3\n")
        assert main(
            ["predict", "--fit-dir", str(fit_dir), "--new-covariates", str(new),
             "--out", str(tmp_path / "p3")]
        ) == 2


class TestSimulate:
    def run(self, out, seed="7", threads="1", replicates="2"):
        return main(
            ["simulate", "--K", "2", "--M", "6", "--m", "3", "--p", "3",
             "--n-k", "8", "--replicates", replicates, "--seed", seed,
             "--threads", threads, "--grid-size-s", "3", "--grid-size-f", "3",
             "--out", str(out)]
        )

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert self.run(a) == 0
        assert self.run(b) == 0
        assert (a / "study.csv").read_bytes() == (b / "study.csv").read_bytes()
        assert (a / "rcr_replicates.csv").read_bytes() == (
            b / "rcr_replicates.csv"
        ).read_bytes()

    def test_thread_count_does_not_change_output(self, tmp_path):
        a, b = tmp_path / "t1", tmp_path / "t2"
        assert self.run(a, threads="1") == 0
        assert self.run(b, threads="2") == 0
        assert (a / "study.csv").read_bytes() == (b / "study.csv").read_bytes()

    def test_invalid_scenario_parameters(self, tmp_path):
        code = main(
            ["simulate", "--K", "2", "--M", "4", "--m", "6", "--p", "2",
             "--replicates", "1", "--out", str(tmp_path / "bad")]
        )
        assert code == 2

    def test_preset_runs(self, tmp_path):
        out = tmp_path / "preset"
        code = main(
            ["simulate", "--scenario", "table1-n10-p5", "--replicates", "1",
             "--seed", "3", "--grid-size-s", "3", "--grid-size-f", "3",
             "--methods", "PL,PPL", "--out", str(out)]
        )
        assert code == 0
        text = (out / "study.csv").read_text().splitlines()
        assert len(text) == 3
        assert text[1].startswith("table1-n10-p5,4,20,3,5,10,")

    def test_timing_column_blank_by_default(self, tmp_path):
        out = tmp_path / "nt"
        assert self.run(out, replicates="1") == 0
        with open(out / "study.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert all(row["seconds_mean"] == "" for row in rows)

    def test_manifest_written_once(self, tmp_path):
        out = tmp_path / "m"
        assert self.run(out, replicates="1") == 0
        manifests = [p for p in out.iterdir() if p.name == "manifest.json"]
        assert len(manifests) == 1
        payload = json.loads(manifests[0].read_text())
        assert payload["command"] == "simulate"
        assert payload["version"]
