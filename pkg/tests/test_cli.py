"""Command-line entry points and exit codes."""

import pytest

from mds.cli import main


class TestLawCommands:
    def test_check_accepts_shipped_laws(self, law_dir, capsys):
        assert main(["law", "check", str(law_dir)]) == 0
        out = capsys.readouterr().out
        assert "ok: 6 laws, root S" in out

    def test_check_rejects_violations_with_kind(self, violation_dir, capsys):
        code = main(["law", "check", str(violation_dir / "cycle")])
        assert code == 1
        assert "CycleDetected" in capsys.readouterr().out

    def test_print_emits_canonical_text(self, law_dir, capsys):
        assert main(["law", "print", str(law_dir / "SB.law")]) == 0
        captured = capsys.readouterr()
        assert captured.out.startswith("law SB extends S {")
        assert "sha256" in captured.err

    def test_print_reports_parse_errors(self, tmp_path, capsys):
        bad = tmp_path / "bad.law"
        bad.write_text("law { }")
        assert main(["law", "print", str(bad)]) == 1


class TestRunCommand:
    def test_passing_scenario_exits_zero(self, scenario_dir):
        assert main(["run", str(scenario_dir / "sandbox.mds"),
                     "--seed", "3"]) == 0

    def test_audit_written_to_file(self, scenario_dir, tmp_path):
        audit = tmp_path / "trail.log"
        assert main(["run", str(scenario_dir / "sandbox.mds"),
                     "--seed", "3", "--audit", str(audit)]) == 0
        lines = audit.read_text().splitlines()
        assert lines and all(" | " in line for line in lines)

    def test_failing_expectation_exits_one(self, tmp_path, law_dir):
        script = tmp_path / "wrong.mds"
        script.write_text(
            f"scenario wrong\nlaw {law_dir}\n"
            "component a modules MS\ncomponent b modules OPS\n"
            "send a -> b op probe\nexpect delivered\n")
        assert main(["run", str(script)]) == 1


class TestOtherCommands:
    def test_fuzz_small_batch(self, capsys):
        assert main(["fuzz", "--trials", "10", "--seed", "1"]) == 0
        assert "agree" in capsys.readouterr().out

    def test_bench_tiny(self, law_dir, capsys):
        assert main(["bench", "--events", "400",
                     "--laws", str(law_dir)]) == 0
        assert "median per event" in capsys.readouterr().out

    def test_usage_error_exits_two(self):
        with pytest.raises(SystemExit) as err:
            main(["law", "frobnicate"])
        assert err.value.code == 2
