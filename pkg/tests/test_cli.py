import csv
import io
import json

import pytest

from stencilmem.cli import main, read_measurements, InputError
from stencilmem.kernels import data_path

SUITE = str(data_path("cloverleaf_tiny.json"))
ICX = str(data_path("icx_8360y.json"))
RANK1 = str(data_path("reference/clv_tiny_rank1.csv"))
RANK72 = str(data_path("reference/clv_tiny_rank72.csv"))
RANK72_NT = str(data_path("reference/clv_tiny_rank72_nt.csv"))


def run(capsys, *argv):
    rc = main(list(argv))
    out = capsys.readouterr()
    return rc, out.out, out.err


class TestAnalyze:
    def test_full_suite(self, capsys):
        rc, out, _ = run(capsys, "analyze", SUITE, ICX)
        lines = [l for l in out.splitlines() if l and not l.startswith("-")]
        assert rc == 0
        assert len(lines) == 1 + 22
        assert lines[0].split()[:2] == ["kernel", "arrays"]
        am04 = next(l for l in lines if l.startswith("am04"))
        assert am04.split() == ["am04", "2", "1", "2", "1", "0", "4",
                                "16", "24", "24", "32", "i"]

    def test_csv_output_parses(self, capsys):
        rc, out, _ = run(capsys, "analyze", SUITE, ICX, "--csv")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert rc == 0 and len(rows) == 22
        row = next(r for r in rows if r["kernel"] == "pdv01")
        assert (row["min"], row["max"]) == ("104", "160")

    def test_empty_suite(self, capsys, tmp_path):
        p = tmp_path / "empty.json"
        p.write_text(json.dumps({"grids": {}, "arrays": {}, "kernels": []}))
        rc, out, _ = run(capsys, "analyze", str(p), ICX)
        assert rc == 0

    def test_malformed_suite_exits_2(self, capsys, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{oops")
        rc, _, err = run(capsys, "analyze", str(p), ICX)
        assert rc == 2
        assert "JSON" in err

    def test_malformed_machine_exits_2(self, capsys, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps({"name": "x"}))
        rc, _, err = run(capsys, "analyze", SUITE, str(p))
        assert rc == 2


class TestSimulate:
    def test_single_kernel_within_tolerance(self, capsys):
        rc, out, _ = run(capsys, "simulate", SUITE, ICX, "--kernel", "am04",
                         "--grid", "256", "--check", "--tolerance", "2")
        assert rc == 0
        assert "am04" in out

    def test_claim_policy_checks_against_floor(self, capsys):
        rc, out, _ = run(capsys, "simulate", SUITE, ICX, "--kernel", "am04",
                         "--grid", "256", "--policy", "claim", "--csv")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert rc == 0
        assert float(rows[0]["model"]) == 16.0

    def test_zero_grid_is_input_error(self, capsys):
        rc, _, err = run(capsys, "simulate", SUITE, ICX, "--grid", "0")
        assert rc == 2

    def test_check_failure_exits_1(self, capsys):
        rc, _, err = run(capsys, "simulate", SUITE, ICX, "--kernel", "am04",
                         "--grid", "128", "--check", "--tolerance", "0.001")
        assert rc == 1
        assert "check failed" in err

    def test_dump_trace_needs_kernel(self, capsys, tmp_path):
        rc, _, err = run(capsys, "simulate", SUITE, ICX,
                         "--dump-trace", str(tmp_path / "t.bin"))
        assert rc == 2

    def test_dump_and_replay(self, capsys, tmp_path):
        trace = tmp_path / "am04.bin"
        rc, _, _ = run(capsys, "simulate", SUITE, ICX, "--kernel", "am04",
                       "--grid", "64", "--dump-trace", str(trace))
        assert rc == 0 and trace.exists()
        rc, out, _ = run(capsys, "replay", str(trace), ICX)
        assert rc == 0
        assert "read_bytes=" in out

    def test_unknown_kernel(self, capsys):
        rc, _, err = run(capsys, "simulate", SUITE, ICX, "--kernel", "nope")
        assert rc == 2

    def test_levels_cache_mode(self, capsys):
        rc, out, _ = run(capsys, "simulate", SUITE, ICX, "--kernel", "am04",
                         "--grid", "128", "--cache-mode", "levels", "--csv")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert rc == 0
        assert abs(float(rows[0]["simulated"]) - 24) < 1.5


class TestPrimeSweep:
    def test_csv_round_trips_and_flags_primes(self, capsys):
        rc, out, _ = run(capsys, "prime-sweep", SUITE, ICX, "--ranks", "70..72")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert rc == 0
        assert len(rows) == 22 * 3
        by_p = {r["p"]: r for r in rows if r["kernel"] == "am04"}
        assert by_p["71"]["prime"] == "1"
        assert by_p["72"]["prime"] == "0"
        assert float(by_p["71"]["bytes_per_it"]) > float(by_p["72"]["bytes_per_it"])

    def test_single_rank_equals_model(self, capsys):
        rc, out, _ = run(capsys, "prime-sweep", SUITE, ICX, "--ranks", "1")
        rows = {r["kernel"]: r for r in csv.DictReader(io.StringIO(out))}
        assert float(rows["am04"]["bytes_per_it"]) == pytest.approx(17.6)

    def test_bad_range(self, capsys):
        rc, _, err = run(capsys, "prime-sweep", SUITE, ICX, "--ranks", "5..1")
        assert rc == 2

    def test_wa_model_variants(self, capsys):
        values = {}
        for wa in ("full", "none", "speci2m", "nt-speci2m"):
            rc, out, _ = run(capsys, "prime-sweep", SUITE, ICX, "--ranks", "1",
                             "--wa", wa)
            assert rc == 0
            rows = {r["kernel"]: r for r in csv.DictReader(io.StringIO(out))}
            values[wa] = float(rows["am04"]["bytes_per_it"])
        assert values["none"] == 16.0
        assert values["full"] == 24.0
        assert values["none"] < values["nt-speci2m"] < values["speci2m"] \
            < values["full"]


class TestCompare:
    def test_rank1_against_lcf_wa(self, capsys):
        rc, out, _ = run(capsys, "compare", SUITE, ICX, RANK1,
                         "--scenario", "lcf-wa", "--check", "--tolerance", "3")
        assert rc == 0
        assert "mean absolute error" in out

    def test_rank72_against_evasion_model(self, capsys):
        rc, out, _ = run(capsys, "compare", SUITE, ICX, RANK72,
                         "--scenario", "speci2m", "--check", "--tolerance", "10")
        assert rc == 0

    def test_check_can_fail(self, capsys):
        rc, _, err = run(capsys, "compare", SUITE, ICX, RANK72,
                         "--scenario", "min", "--check", "--tolerance", "1")
        assert rc == 1
        assert "check failed" in err

    def test_no_evasion_override_improves_fit(self, capsys):
        def mean_err(*extra):
            rc, out, _ = run(capsys, "compare", SUITE, ICX, RANK72,
                             "--scenario", "speci2m", *extra)
            assert rc == 0
            return float(out.rsplit("mean absolute error:", 1)[1].split("%")[0])
        plain = mean_err()
        overridden = mean_err("--no-evasion", "ac01,ac02,ac05,ac06")
        assert overridden < plain

    def test_missing_column_names_it(self, capsys, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("kernel,ranks,read_gbytes,write_gbytes,call_count,timesteps\n")
        rc, _, err = run(capsys, "compare", SUITE, ICX, str(p))
        assert rc == 2
        assert "grid_points" in err

    def test_unknown_kernel_in_csv(self, capsys, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("kernel,ranks,read_gbytes,write_gbytes,call_count,"
                     "timesteps,grid_points\nzz99,1,1.0,1.0,1,400,1000\n")
        rc, _, err = run(capsys, "compare", SUITE, ICX, str(p))
        assert rc == 2

    def test_measurement_parsing(self):
        records = read_measurements(RANK1)
        assert len(records) == 22
        am04 = next(r for r in records if r.kernel == "am04")
        assert am04.bytes_per_it == pytest.approx(24.05, abs=5e-4)

    def test_rank1_fixture_matches_frozen_reference(self):
        from refdata import meas1_of
        for rec in read_measurements(RANK1):
            assert rec.bytes_per_it == pytest.approx(meas1_of(rec.kernel),
                                                     abs=5e-4), rec.kernel

    def test_negative_volume_rejected(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("kernel,ranks,read_gbytes,write_gbytes,call_count,"
                     "timesteps,grid_points\nam04,1,-1.0,1.0,1,400,1000\n")
        with pytest.raises(InputError):
            read_measurements(str(p))

    def test_zero_volume_rejected(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("kernel,ranks,read_gbytes,write_gbytes,call_count,"
                     "timesteps,grid_points\nam04,1,0.0,0.0,1,400,1000\n")
        with pytest.raises(InputError):
            read_measurements(str(p))


class TestStoreRatio:
    def test_always_allocate(self, capsys):
        rc, out, _ = run(capsys, "store-ratio", "--streams", "1",
                         "--volume", "1048576")
        assert rc == 0
        assert float(out) == 2.0

    def test_nt_flag(self, capsys):
        rc, out, _ = run(capsys, "store-ratio", "--streams", "2", "--nt",
                         "--volume", "1048576")
        assert rc == 0
        assert float(out) == 1.0

    def test_claim_policy(self, capsys):
        rc, out, _ = run(capsys, "store-ratio", "--streams", "3",
                         "--policy", "claim", "--volume", "1048576")
        assert rc == 0
        assert float(out) == 1.0

    def test_nt_conflicts_with_policy(self, capsys):
        rc, _, err = run(capsys, "store-ratio", "--nt", "--policy", "always")
        assert rc == 2

    def test_bad_stream_count(self, capsys):
        rc, _, _ = run(capsys, "store-ratio", "--streams", "0")
        assert rc == 2


class TestHaloCopy:
    def test_sweep_table(self, capsys):
        rc, out, _ = run(capsys, "halo-copy", "--inner", "216",
                         "--halo", "0..3", "--volume", "1048576", "--csv")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert rc == 0
        ratios = {r["halo"]: float(r["read_write_ratio"]) for r in rows}
        assert ratios["0"] == 1.0
        assert ratios["3"] > 1.01

    def test_single_halo(self, capsys):
        rc, out, _ = run(capsys, "halo-copy", "--inner", "1920", "--halo", "8",
                         "--volume", "1048576")
        assert rc == 0

    def test_negative_halo(self, capsys):
        rc, _, _ = run(capsys, "halo-copy", "--halo", "-3")
        assert rc == 2
