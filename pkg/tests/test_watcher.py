import json
import threading
import time

import pytest

from picoflow.watcher import (
    CheckpointJournal, JournalWriteError, WatchConfig, Watcher, file_digest,
    should_process,
)


@pytest.fixture
def setup(tmp_path):
    watch_dir = tmp_path / "inbox"
    watch_dir.mkdir()
    journal = CheckpointJournal(tmp_path / "journal.jsonl")
    triggers = []
    config = WatchConfig(watch_dir=watch_dir, glob="*.emdl",
                         stability_window=2.0, poll_period=1.0)
    w = Watcher(config, journal, triggers.append)
    return watch_dir, journal, triggers, w


def drive(w, times):
    for t in times:
        w.scan_once(now=t)


class TestScan:
    def test_empty_dir(self, setup):
        _, _, triggers, w = setup
        drive(w, [0, 1, 2, 3, 4])
        assert triggers == []

    def test_trigger_after_stability(self, setup):
        watch_dir, _, triggers, w = setup
        (watch_dir / "a.emdl").write_bytes(b"payload")
        drive(w, [0, 1])          # first sight at 0; 1 < window
        assert triggers == []
        drive(w, [2.1])           # 2.1 - 0 >= 2
        assert [p.name for p in triggers] == ["a.emdl"]
        drive(w, [3, 4, 5])
        assert len(triggers) == 1  # never re-fires

    def test_partial_write_debounced(self, setup):
        watch_dir, _, triggers, w = setup
        f = watch_dir / "b.emdl"
        f.write_bytes(b"chunk1")
        drive(w, [0.0])
        with open(f, "ab") as fh:   # second chunk 0.5 s later
            fh.write(b"chunk2")
        drive(w, [0.5, 1.0, 2.0])   # growth at 0.5 restarts the clock
        assert triggers == []
        drive(w, [2.6])             # 2.6 - 0.5 >= 2
        assert len(triggers) == 1

    def test_growing_file_never_triggers(self, setup):
        watch_dir, _, triggers, w = setup
        f = watch_dir / "c.emdl"
        for i, t in enumerate([0, 1, 2, 3, 4, 5]):
            with open(f, "ab") as fh:
                fh.write(b"x" * 10)
            drive(w, [t])
        assert triggers == []

    def test_glob_filter(self, setup):
        watch_dir, _, triggers, w = setup
        (watch_dir / "notes.txt").write_text("ignore me")
        drive(w, [0, 3, 6])
        assert triggers == []

    def test_rewritten_content_reprocessed(self, setup):
        watch_dir, _, triggers, w = setup
        f = watch_dir / "d.emdl"
        f.write_bytes(b"version one")
        drive(w, [0, 2.5])
        assert len(triggers) == 1
        time.sleep(0.01)  # ensure a distinct mtime_ns
        f.write_bytes(b"version two")
        drive(w, [3.0, 5.5])
        assert len(triggers) == 2

    def test_identical_rewrite_not_reprocessed(self, setup):
        watch_dir, _, triggers, w = setup
        f = watch_dir / "e.emdl"
        f.write_bytes(b"same bytes")
        drive(w, [0, 2.5])
        time.sleep(0.01)
        f.write_bytes(b"same bytes")
        drive(w, [3.0, 5.5, 6.0])
        assert len(triggers) == 1


class TestRestart:
    def test_no_retrigger_after_restart(self, tmp_path):
        watch_dir = tmp_path / "inbox"
        watch_dir.mkdir()
        journal_path = tmp_path / "journal.jsonl"
        config = WatchConfig(watch_dir=watch_dir, stability_window=2.0)
        for i in range(3):
            (watch_dir / f"f{i}.emdl").write_bytes(b"data%d" % i)

        first_triggers = []
        w1 = Watcher(config, CheckpointJournal(journal_path), first_triggers.append)
        drive(w1, [0, 2.5])
        assert len(first_triggers) == 3

        # fresh watcher, fresh journal object, same journal file
        second_triggers = []
        w2 = Watcher(config, CheckpointJournal(journal_path), second_triggers.append)
        drive(w2, [100, 102.5, 105])
        assert second_triggers == []

    def test_crash_between_scans_preserves_exactly_once(self, tmp_path):
        watch_dir = tmp_path / "inbox"
        watch_dir.mkdir()
        journal_path = tmp_path / "journal.jsonl"
        config = WatchConfig(watch_dir=watch_dir, stability_window=1.0, poll_period=1.0)
        for i in range(10):
            (watch_dir / f"g{i:02d}.emdl").write_bytes(b"content-%d" % i)

        all_triggers = []
        clock = 0.0
        # three watcher incarnations, "killed" after partial progress
        for scans in (3, 3, 10):
            w = Watcher(config, CheckpointJournal(journal_path), all_triggers.append)
            for _ in range(scans):
                w.scan_once(now=clock)
                clock += 1.0
        names = sorted(p.name for p in all_triggers)
        assert names == sorted(f"g{i:02d}.emdl" for i in range(10))


class TestJournal:
    def test_reload_yields_same_set(self, tmp_path):
        path = tmp_path / "j.jsonl"
        j1 = CheckpointJournal(path)
        j1.record("/a", 10, "d1")
        j1.record("/b", 20, "d2")
        j2 = CheckpointJournal(path)
        assert len(j2) == 2
        assert j2.contains("/a", 10, "d1")
        assert not j2.contains("/a", 10, "other")

    def test_torn_final_line_tolerated(self, tmp_path):
        path = tmp_path / "j.jsonl"
        j1 = CheckpointJournal(path)
        j1.record("/a", 10, "d1")
        with open(path, "a") as f:
            f.write('{"path": "/b", "si')  # crash mid-write
        j2 = CheckpointJournal(path)
        assert len(j2) == 1

    def test_write_failure_raises(self, tmp_path):
        journal = CheckpointJournal(tmp_path / "j.jsonl")
        journal.path = tmp_path / "missing-dir" / "j.jsonl"
        with pytest.raises(JournalWriteError):
            journal.record("/a", 1, "d")

    def test_journal_failure_halts_watcher(self, tmp_path):
        watch_dir = tmp_path / "inbox"
        watch_dir.mkdir()
        journal = CheckpointJournal(tmp_path / "j.jsonl")
        journal.path = tmp_path / "missing-dir" / "j.jsonl"
        config = WatchConfig(watch_dir=watch_dir, stability_window=1.0)
        w = Watcher(config, journal, lambda p: None)
        (watch_dir / "x.emdl").write_bytes(b"data")
        w.scan_once(now=0)
        with pytest.raises(JournalWriteError):
            w.scan_once(now=5)

    def test_entry_format(self, tmp_path):
        path = tmp_path / "j.jsonl"
        CheckpointJournal(path).record("/a/b.emdl", 7, "abc123")
        entry = json.loads(path.read_text().splitlines()[0])
        assert set(entry) == {"path", "size", "sha256", "triggered_at"}
        assert entry["path"] == "/a/b.emdl"


class TestShouldProcess:
    def test_unseen_true(self, tmp_path):
        f = tmp_path / "x.emdl"
        f.write_bytes(b"abc")
        journal = CheckpointJournal(tmp_path / "j.jsonl")
        assert should_process(f, journal)

    def test_journaled_identical_false(self, tmp_path):
        f = tmp_path / "x.emdl"
        f.write_bytes(b"abc")
        journal = CheckpointJournal(tmp_path / "j.jsonl")
        journal.record(str(f), 3, file_digest(f))
        assert not should_process(f, journal)

    def test_changed_content_true(self, tmp_path):
        f = tmp_path / "x.emdl"
        f.write_bytes(b"abc")
        journal = CheckpointJournal(tmp_path / "j.jsonl")
        journal.record(str(f), 3, file_digest(f))
        f.write_bytes(b"xyz")
        assert should_process(f, journal)


class TestRunLoop:
    def test_run_until_stopped(self, tmp_path):
        watch_dir = tmp_path / "inbox"
        watch_dir.mkdir()
        config = WatchConfig(watch_dir=watch_dir, stability_window=0.1,
                             poll_period=0.05)
        journal = CheckpointJournal(tmp_path / "j.jsonl")
        triggers = []
        stop = threading.Event()
        thread = threading.Thread(
            target=Watcher(config, journal, triggers.append).run, args=(stop,))
        thread.start()
        (watch_dir / "live.emdl").write_bytes(b"data")
        deadline = time.monotonic() + 5
        while not triggers and time.monotonic() < deadline:
            time.sleep(0.02)
        stop.set()
        thread.join(timeout=2)
        assert [p.name for p in triggers] == ["live.emdl"]

    def test_config_validation(self, tmp_path):
        with pytest.raises(ValueError):
            WatchConfig(watch_dir=tmp_path / "nope")
        with pytest.raises(ValueError):
            WatchConfig(watch_dir=tmp_path, stability_window=0.5, poll_period=1.0)
