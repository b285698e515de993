import json

import pytest
from fastapi.testclient import TestClient

from musemer import ranking as rk
from musemer.service.core import (
    AnnotationService, CampaignStatus, GoldPair, ServiceError, SessionPhase,
)
from musemer.service.http import create_app
from service_driver import (
    CampaignDriver, FakeClock, collect_exports, make_gold_pairs, make_truth,
    run_seeded_campaign,
)


DIM = rk.Dimension.AROUSAL


def make_service(tmp_path, **kwargs):
    clock = kwargs.pop("clock", FakeClock())
    service = AnnotationService(tmp_path / "log.jsonl", clock=clock, **kwargs)
    return service, clock


def make_campaign(service, n_clips=6, seed=0, **kwargs):
    clips = {f"clip{i:02d}": f"/audio/clip{i:02d}.wav" for i in range(n_clips)}
    service.create_campaign("camp", DIM, clips, make_gold_pairs(DIM),
                            seed=seed, **kwargs)
    return clips


def answer_quiz(service, session_id, n_correct=5):
    """Answer the 5 quiz tasks with the requested number of correct picks."""
    outcome = None
    for i in range(5):
        service.next_task(session_id)
        assignment = service.sessions[session_id].assignment
        if i < n_correct:
            choice = assignment.gold_correct
        else:
            key = rk.ComparisonKey(assignment.left, assignment.right, DIM)
            choice = key.other(assignment.gold_correct)
        outcome = service.submit_task(session_id, choice)
    return outcome


class TestCampaignLifecycle:
    def test_duplicate_campaign_rejected(self, tmp_path):
        service, _ = make_service(tmp_path)
        make_campaign(service)
        with pytest.raises(ServiceError):
            make_campaign(service)

    def test_needs_enough_gold(self, tmp_path):
        service, _ = make_service(tmp_path)
        with pytest.raises(ServiceError):
            service.create_campaign("camp", DIM, {"a": "a.wav", "b": "b.wav"},
                                    make_gold_pairs(DIM, n=3), seed=0)

    def test_gold_colliding_with_campaign_pair_rejected(self, tmp_path):
        service, _ = make_service(tmp_path)
        clips = {c: f"{c}.wav" for c in ("a", "b", "c")}
        state = rk.init_ranking(sorted(clips), DIM, 0)
        key = next(iter(rk.pending_comparisons(state)))
        gold = make_gold_pairs(DIM, n=5) + [GoldPair(key, key.left)]
        with pytest.raises(ServiceError):
            service.create_campaign("camp", DIM, clips, gold, seed=0)

    def test_unknown_ids_raise(self, tmp_path):
        service, _ = make_service(tmp_path)
        with pytest.raises(ServiceError):
            service.create_session("ghost", "ann")
        with pytest.raises(ServiceError):
            service.next_task("ghost-s1")
        with pytest.raises(ServiceError):
            service.progress("ghost")


class TestQuizGating:
    def test_four_of_five_passes(self, tmp_path):
        service, _ = make_service(tmp_path)
        make_campaign(service)
        session = service.create_session("camp", "ann")
        outcome = answer_quiz(service, session.id, n_correct=4)
        assert outcome["outcome"] == "quiz_passed"
        assert outcome["score"] == 4
        assert service.sessions[session.id].phase == SessionPhase.ACTIVE

    def test_three_of_five_blocks(self, tmp_path):
        service, _ = make_service(tmp_path)
        make_campaign(service)
        session = service.create_session("camp", "ann")
        outcome = answer_quiz(service, session.id, n_correct=3)
        assert outcome["outcome"] == "quiz_failed"
        assert service.sessions[session.id].phase == SessionPhase.BLOCKED
        with pytest.raises(ServiceError):
            service.next_task(session.id)

    def test_quiz_tasks_hide_their_kind(self, tmp_path):
        service, _ = make_service(tmp_path)
        make_campaign(service)
        session = service.create_session("camp", "ann")
        task = service.next_task(session.id)
        assert set(task) == {"status", "session", "phase", "clip_a", "clip_b",
                             "quiz_progress"}
        assert task["phase"] == "quiz"
        assert task["quiz_progress"] == "0/5"

    def test_quiz_selection_is_seed_stable(self, tmp_path):
        service_a, _ = make_service(tmp_path)
        make_campaign(service_a)
        a = service_a.create_session("camp", "ann")
        service_b = AnnotationService.replay(tmp_path / "log.jsonl",
                                             clock=FakeClock())
        assert service_b.sessions[a.id].quiz_pairs == \
            service_a.sessions[a.id].quiz_pairs


class TestGoldChecks:
    def test_every_third_active_task_is_gold(self, tmp_path):
        service, _ = make_service(tmp_path)
        make_campaign(service, gold_rate=3)
        session = service.create_session("camp", "ann")
        answer_quiz(service, session.id)
        pattern = []
        for _ in range(7):
            task = service.next_task(session.id)
            assert task["status"] == "task"
            assignment = service.sessions[session.id].assignment
            pattern.append(assignment.is_gold)
            choice = (assignment.gold_correct if assignment.is_gold
                      else task["clip_a"])
            service.submit_task(session.id, choice)
        assert pattern == [False, False, True, False, False, True, False]

    def test_wrong_gold_blocks_without_touching_ranking(self, tmp_path):
        service, _ = make_service(tmp_path)
        make_campaign(service, gold_rate=1)  # first active task is gold
        session = service.create_session("camp", "ann")
        answer_quiz(service, session.id)
        campaign = service.campaigns["camp"]
        before = (dict(campaign.ranking.resolved),
                  {k: list(v) for k, v in campaign.ranking.judgments.items()})
        service.next_task(session.id)
        assignment = service.sessions[session.id].assignment
        assert assignment.is_gold
        key = rk.ComparisonKey(assignment.left, assignment.right, DIM)
        outcome = service.submit_task(session.id, key.other(assignment.gold_correct))
        assert outcome["outcome"] == "blocked"
        assert service.sessions[session.id].phase == SessionPhase.BLOCKED
        after = (dict(campaign.ranking.resolved),
                 {k: list(v) for k, v in campaign.ranking.judgments.items()})
        assert after == before
        with pytest.raises(ServiceError):
            service.next_task(session.id)

    def test_correct_gold_continues(self, tmp_path):
        service, _ = make_service(tmp_path)
        make_campaign(service, gold_rate=1)
        session = service.create_session("camp", "ann")
        answer_quiz(service, session.id)
        service.next_task(session.id)
        assignment = service.sessions[session.id].assignment
        outcome = service.submit_task(session.id, assignment.gold_correct)
        assert outcome["outcome"] == "continue"
        assert service.sessions[session.id].phase == SessionPhase.ACTIVE


class TestLeasing:
    def _active_session(self, service, annotator):
        session = service.create_session("camp", annotator)
        answer_quiz(service, session.id)
        return session.id

    def test_next_task_is_idempotent_while_leased(self, tmp_path):
        service, _ = make_service(tmp_path)
        make_campaign(service)
        sid = self._active_session(service, "ann")
        first = service.next_task(sid)
        second = service.next_task(sid)
        assert (first["clip_a"], first["clip_b"]) == \
            (second["clip_a"], second["clip_b"])
        assert service.sessions[sid].active_tasks_served == 1

    def test_key_lease_capacity_is_three_annotators(self, tmp_path):
        service, clock = make_service(tmp_path)
        make_campaign(service, n_clips=2)  # a single comparison key
        sids = [self._active_session(service, f"ann{i}") for i in range(4)]
        tasks = [service.next_task(s) for s in sids[:3]]
        assert all(t["status"] == "task" for t in tasks)
        assert service.next_task(sids[3])["status"] == "drained"
        # leases expire; the fourth annotator can now pick the key up
        clock.advance(10_000.0)
        assert service.next_task(sids[3])["status"] == "task"

    def test_submit_after_lease_expiry_rejected(self, tmp_path):
        service, clock = make_service(tmp_path)
        make_campaign(service)
        sid = self._active_session(service, "ann")
        task = service.next_task(sid)
        clock.advance(10_000.0)
        with pytest.raises(ServiceError):
            service.submit_task(sid, task["clip_a"])

    def test_same_annotator_never_votes_twice_on_a_key(self, tmp_path):
        service, _ = make_service(tmp_path)
        make_campaign(service, n_clips=2)
        sid_a = self._active_session(service, "ann")
        task = service.next_task(sid_a)
        service.submit_task(sid_a, task["clip_a"])
        # a second session by the same annotator drains instead of re-voting
        sid_b = self._active_session(service, "ann")
        assert service.next_task(sid_b)["status"] == "drained"

    def test_submit_choice_must_belong_to_pair(self, tmp_path):
        service, _ = make_service(tmp_path)
        make_campaign(service)
        sid = self._active_session(service, "ann")
        service.next_task(sid)
        with pytest.raises(ServiceError):
            service.submit_task(sid, "not-a-clip")


class TestCampaignCompletion:
    def test_driver_completes_and_orders_by_truth(self, tmp_path):
        exports = run_seeded_campaign(tmp_path / "log.jsonl", seed=4)
        truth = make_truth(12, seed=4)
        rows = exports["rankings.csv"].strip().splitlines()
        assert rows[0] == "rank,clip_id,rating"
        ranked = [line.split(",")[1] for line in rows[1:]]
        assert ranked == sorted(truth, key=truth.__getitem__, reverse=True)
        assert exports["rankings.csv"].splitlines()[1].endswith("1.0")
        # honest annotators agree perfectly
        assert "alpha=1.0" in exports["reliability.txt"]

    def test_export_requires_completion(self, tmp_path):
        service, _ = make_service(tmp_path)
        make_campaign(service)
        with pytest.raises(ServiceError):
            service.export_rankings_csv("camp")
        with pytest.raises(ServiceError):
            service.export_ratings_csv("camp")

    def test_progress_counters(self, tmp_path):
        service, _ = make_service(tmp_path)
        make_campaign(service, n_clips=6)
        p = service.progress("camp")
        assert p["items"] == 6
        assert p["status"] == "running"
        assert p["pending"] == 5  # first partition compares against one pivot


class TestDurability:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_crash_and_replay_exports_are_byte_equal(self, tmp_path, seed):
        reference = run_seeded_campaign(tmp_path / "ref.jsonl", seed=seed)
        crashed = run_seeded_campaign(tmp_path / "crash.jsonl", seed=seed,
                                      crash_after_steps=40)
        assert crashed == reference

    def test_replay_of_finished_log_restores_state(self, tmp_path):
        log = tmp_path / "log.jsonl"
        exports = run_seeded_campaign(log, seed=9)
        replayed = AnnotationService.replay(log, clock=FakeClock())
        assert replayed.campaigns["camp"].status == CampaignStatus.COMPLETE
        assert collect_exports(replayed, "camp") == exports

    def test_log_is_append_only_json_lines(self, tmp_path):
        log = tmp_path / "log.jsonl"
        run_seeded_campaign(log, seed=3)
        records = [json.loads(line) for line in log.read_text().splitlines()]
        assert [r["seq"] for r in records] == list(range(1, len(records) + 1))
        kinds = {r["kind"] for r in records}
        assert kinds == {"create_campaign", "create_session", "next_task",
                         "submit_task"}


class TestHttpApi:
    def _client(self, tmp_path, clips=None, wav_factory=None):
        service, _ = make_service(tmp_path)
        return TestClient(create_app(service)), service

    def _campaign_body(self, clips, seed=0, gold_rate=10):
        return {
            "id": "camp",
            "dimension": "arousal",
            "clips": clips,
            "gold": [[f"gold{i}a", f"gold{i}b", f"gold{i}a"]
                     for i in range(6)],
            "seed": seed,
            "gold_rate": gold_rate,
        }

    def test_end_to_end_recovers_true_order(self, tmp_path):
        client, service = self._client(tmp_path)
        truth = make_truth(30, seed=12)
        clips = {c: f"/audio/{c}.wav" for c in truth}
        resp = client.post("/campaigns",
                           json=self._campaign_body(clips, gold_rate=10))
        assert resp.status_code == 200
        sessions = []
        for i in range(5):
            resp = client.post("/campaigns/camp/sessions",
                               json={"annotator": f"ann{i}"})
            assert resp.status_code == 200
            sessions.append(resp.json()["session"])

        def step(session_id):
            task = client.get(f"/sessions/{session_id}/next").json()
            if task["status"] == "drained":
                return False
            assignment = service.sessions[session_id].assignment
            if assignment.is_gold:
                choice = assignment.gold_correct
            else:
                a, b = task["clip_a"], task["clip_b"]
                choice = a if truth[a] >= truth[b] else b
            resp = client.post(f"/sessions/{session_id}/submit",
                               json={"choice": choice})
            assert resp.status_code == 200
            return True

        guard = 0
        while client.get("/campaigns/camp/progress").json()["status"] != "complete":
            for session_id in sessions:
                step(session_id)
            guard += 1
            assert guard < 2000

        rows = client.get("/campaigns/camp/export/rankings").text.strip().splitlines()
        ranked = [line.split(",")[1] for line in rows[1:]]
        assert ranked == sorted(truth, key=truth.__getitem__, reverse=True)
        reliability = client.get("/campaigns/camp/export/reliability").json()
        assert reliability["alpha"] == 1.0
        judgments = client.get("/campaigns/camp/export/judgments").text
        assert all(json.loads(l)["winner"] for l in judgments.splitlines())

    def test_audio_range_requests(self, tmp_path, wav_factory):
        wav = wav_factory(name="clip00.wav", duration=6.0)
        client, service = self._client(tmp_path)
        clips = {"clip00": str(wav), "clip01": str(wav)}
        client.post("/campaigns", json=self._campaign_body(clips))
        full = client.get("/clips/clip00/audio")
        assert full.status_code == 200
        assert full.headers["accept-ranges"] == "bytes"
        part = client.get("/clips/clip00/audio",
                          headers={"Range": "bytes=0-3"})
        assert part.status_code == 206
        assert part.content == b"RIFF"
        assert part.headers["content-range"].startswith("bytes 0-3/")
        bad = client.get("/clips/clip00/audio",
                         headers={"Range": f"bytes={10**9}-"})
        assert bad.status_code == 416

    def test_not_found_paths(self, tmp_path):
        client, _ = self._client(tmp_path)
        assert client.get("/campaigns/ghost/progress").status_code == 404
        assert client.get("/sessions/ghost/next").status_code == 404
        assert client.get("/clips/ghost/audio").status_code == 404
        clips = {f"c{i}": f"/audio/c{i}.wav" for i in range(4)}
        client.post("/campaigns", json=self._campaign_body(clips))
        assert client.get("/campaigns/camp/export/nope").status_code == 404
        # incomplete campaign: export exists but is not ready -> 400
        assert client.get("/campaigns/camp/export/rankings").status_code == 400
