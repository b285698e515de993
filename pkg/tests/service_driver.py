"""Deterministic campaign driver used by the service tests.

The driver plays a panel of honest annotators against an AnnotationService:
quizzes and in-task gold checks are answered correctly, real comparisons are
answered from a ground-truth value table. All decisions are pure functions of
the observable task stream and the truth table, so re-running the driver
against a replayed service continues the exact same command sequence.
"""

from __future__ import annotations

from musemer import ranking as rk
from musemer.service.core import (
    AnnotationService, CampaignStatus, GoldPair, SessionPhase,
)


class FakeClock:
    """Monotonic counter standing in for time.time()."""

    def __init__(self, start: float = 1000.0, step: float = 1.0):
        self.now = start
        self.step = step

    def __call__(self) -> float:
        self.now += self.step
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


def make_gold_pairs(dimension: rk.Dimension, n: int = 6) -> list[GoldPair]:
    """Gold pairs over synthetic clip ids outside any campaign's item set."""
    return [
        GoldPair(rk.ComparisonKey(f"gold{i}a", f"gold{i}b", dimension),
                 f"gold{i}a")
        for i in range(n)
    ]


def make_truth(n_clips: int, seed: int) -> dict[str, float]:
    import random

    values = list(range(n_clips))
    random.Random(seed).shuffle(values)
    return {f"clip{i:02d}": float(v) for i, v in enumerate(values)}


class CampaignDriver:
    """Round-robin panel of annotators working one campaign to completion."""

    def __init__(self, service: AnnotationService, campaign_id: str,
                 truth: dict[str, float], annotator_names: list[str]):
        self.service = service
        self.campaign_id = campaign_id
        self.truth = truth
        self.session_ids = [
            service.create_session(campaign_id, name).id
            for name in annotator_names
        ]
        self._cursor = 0

    @property
    def complete(self) -> bool:
        campaign = self.service.campaigns[self.campaign_id]
        return campaign.status == CampaignStatus.COMPLETE

    def step(self, session_id: str) -> str:
        """One next/submit cycle for a session; returns the step outcome."""
        svc = self.service
        session = svc.sessions[session_id]
        if session.phase in (SessionPhase.BLOCKED, SessionPhase.DONE):
            return "stopped"
        task = svc.next_task(session_id)
        if task["status"] == "drained":
            return "drained"
        assignment = svc.sessions[session_id].assignment
        if assignment.is_gold:
            choice = assignment.gold_correct
        else:
            a, b = task["clip_a"], task["clip_b"]
            choice = a if self.truth[a] >= self.truth[b] else b
        svc.submit_task(session_id, choice)
        return "ok"

    def run(self, stop_after_steps: int | None = None,
            max_steps: int = 100_000) -> int:
        """Drive until the campaign completes (or the step budget runs out).

        The round-robin cursor persists across calls so a crash-and-replay
        continuation issues the exact same command stream as an unbroken run.
        """
        steps = 0
        stalled = 0
        while not self.complete:
            if steps >= max_steps:
                raise RuntimeError("campaign did not complete in the budget")
            session_id = self.session_ids[self._cursor]
            self._cursor = (self._cursor + 1) % len(self.session_ids)
            outcome = self.step(session_id)
            steps += 1
            stalled = 0 if outcome == "ok" else stalled + 1
            if stalled > 2 * len(self.session_ids):
                raise RuntimeError("all sessions stalled before completion")
            if stop_after_steps is not None and steps >= stop_after_steps:
                return steps
        return steps


def collect_exports(service: AnnotationService, campaign_id: str) -> dict[str, str]:
    report = service.export_reliability(campaign_id)
    return {
        "rankings.csv": service.export_rankings_csv(campaign_id),
        "ratings.csv": service.export_ratings_csv(campaign_id),
        "judgments.jsonl": service.export_judgments(campaign_id),
        "reliability.txt": (
            f"alpha={report.alpha!r}\n"
            f"unanimous_rate={report.unanimous_rate!r}\n"
            f"pairwise_rate={report.pairwise_rate!r}\n"
        ),
    }


def run_seeded_campaign(log_path, seed: int, n_clips: int = 12,
                        n_annotators: int = 3,
                        crash_after_steps: int | None = None) -> dict[str, str]:
    """Full campaign run; optionally crash and replay mid-way.

    Returns the four export payloads keyed by filename.
    """
    clock = FakeClock()
    truth = make_truth(n_clips, seed)
    dimension = rk.Dimension.AROUSAL
    service = AnnotationService(log_path, clock=clock)
    service.create_campaign(
        "camp", dimension,
        {c: f"/audio/{c}.wav" for c in truth},
        make_gold_pairs(dimension), seed=seed,
    )
    driver = CampaignDriver(service, "camp", truth,
                            [f"ann{i}" for i in range(n_annotators)])
    if crash_after_steps is not None:
        driver.run(stop_after_steps=crash_after_steps)
        # simulated crash: all in-memory state is lost, the log survives
        driver.service = AnnotationService.replay(log_path, clock=clock)
    driver.run()
    return collect_exports(driver.service, "camp")
