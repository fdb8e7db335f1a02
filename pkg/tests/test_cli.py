import pytest

from patchindex.cli import main


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "t.pdx"
    rc = main(["generate", "--kind", "nuc", "--rows", "5000",
               "--exception-rate", "0.2", "--partitions", "2",
               "--seed", "3", "--out", str(path)])
    assert rc == 0
    return path


@pytest.fixture
def sorted_dataset(tmp_path):
    path = tmp_path / "s.pdx"
    main(["generate", "--kind", "nsc", "--rows", "5000",
          "--exception-rate", "0.05", "--partitions", "2",
          "--seed", "3", "--out", str(path)])
    return path


class TestExitCodes:
    def test_unknown_verb_usage_error(self):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 2

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit) as e:
            main(["generate", "--kind", "nuc"])
        assert e.value.code == 2

    def test_success_zero(self, dataset):
        assert main(["index", "stats", "--table", str(dataset)]) == 0


class TestGenerate:
    def test_seed_determinism(self, tmp_path):
        a, b = tmp_path / "a.pdx", tmp_path / "b.pdx"
        args = ["generate", "--kind", "nsc", "--rows", "3000",
                "--exception-rate", "0.1", "--seed", "7"]
        main(args + ["--out", str(a)])
        main(args + ["--out", str(b)])
        assert a.read_bytes() == b.read_bytes()


class TestIndex:
    def test_stats_output(self, dataset, capsys):
        main(["index", "stats", "--table", str(dataset),
              "--constraint", "nuc", "--store", "identifiers"])
        out = capsys.readouterr().out
        assert "constraint: nuc" in out
        assert "store: identifiers" in out
        assert "exception_rate: 0.2" in out

    def test_create_and_rebuild(self, sorted_dataset, capsys):
        assert main(["index", "create", "--table", str(sorted_dataset),
                     "--constraint", "nsc:asc"]) == 0
        assert "created in" in capsys.readouterr().out
        assert main(["index", "rebuild", "--table", str(sorted_dataset),
                     "--constraint", "nsc"]) == 0
        assert "rebuild in" in capsys.readouterr().out


class TestQuery:
    def test_distinct_verify_ok(self, dataset, capsys):
        rc = main(["query", "distinct", "--table", str(dataset), "--verify"])
        assert rc == 0
        assert "verification ok" in capsys.readouterr().out

    def test_sort_verify_ok(self, sorted_dataset):
        assert main(["query", "sort", "--table", str(sorted_dataset),
                     "--verify"]) == 0

    def test_join_verify_ok(self, sorted_dataset):
        assert main(["query", "join", "--table", str(sorted_dataset),
                     "--dim-rows", "5000", "--verify"]) == 0

    def test_explain_prints_tree(self, dataset, capsys):
        rc = main(["query", "distinct", "--table", str(dataset), "--explain"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "Union" in out
        assert "Scan[exclude_patches]" in out
        assert "cost=" in out

    def test_csv_output(self, dataset, tmp_path, capsys):
        csv = tmp_path / "q.csv"
        main(["query", "distinct", "--table", str(dataset),
              "--csv-out", str(csv)])
        lines = csv.read_text().splitlines()
        assert lines[0].startswith("experiment,param,variant,runtime_ns")
        assert lines[1].startswith("query_distinct,")


class TestUpdate:
    @pytest.mark.parametrize("op", ["insert", "modify", "delete"])
    def test_update_runs(self, dataset, op, capsys):
        rc = main(["update", op, "--table", str(dataset), "--count", "50",
                   "--granularity", "10", "--constraint", "nuc"])
        assert rc == 0
        assert f"{op} x50" in capsys.readouterr().out

    def test_nsc_update(self, sorted_dataset):
        assert main(["update", "insert", "--table", str(sorted_dataset),
                     "--count", "30", "--granularity", "5",
                     "--constraint", "nsc", "--store", "identifiers"]) == 0


class TestBenchVerbs:
    def test_shard_sweep_small(self, capsys):
        rc = main(["bench", "shard-sweep", "--bits", "100000",
                   "--deletes", "1000"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "shard_sweep,256,scalar," in out

    def test_bench_query_small(self, tmp_path, capsys):
        csv = tmp_path / "bq.csv"
        rc = main(["bench", "query", "--rows", "3000", "--rates", "0.0", "0.2",
                   "--queries", "distinct", "--csv-out", str(csv)])
        assert rc == 0
        lines = csv.read_text().splitlines()
        assert lines[0] == ("experiment,param,variant,runtime_ns,rows,"
                            "patches,memory_bytes,blocks_scanned")
        assert len(lines) > 4

    def test_bench_update_small(self, capsys):
        rc = main(["bench", "update", "--rows", "2000", "--op", "delete",
                   "--count", "40", "--granularities", "10", "40"])
        assert rc == 0
        assert "update_delete" in capsys.readouterr().out
