"""Annotation campaign service: session lifecycle, quiz gating, gold checks,
task leasing, and an append-only command log.

Every state change is driven by a command record. Commands are validated and
applied in memory, then appended to the log before the caller sees a
response; replaying the log (optionally after a crash) rebuilds the exact
service state, because every decision is a deterministic function of
(state, command, logged timestamp).
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

from .. import ranking as rk


DEFAULT_QUIZ_SIZE = 5
DEFAULT_QUIZ_PASS_THRESHOLD = 0.7
DEFAULT_GOLD_RATE = 10          # every G-th active task is a gold check
DEFAULT_LEASE_SECONDS = 600.0
MAX_LEASES_PER_KEY = 3


class ServiceError(Exception):
    """Invalid command against the annotation service."""


class SessionPhase(Enum):
    QUIZ = "quiz"
    ACTIVE = "active"
    BLOCKED = "blocked"
    DONE = "done"


class CampaignStatus(Enum):
    RUNNING = "running"
    COMPLETE = "complete"


@dataclass(frozen=True, slots=True)
class GoldPair:
    key: rk.ComparisonKey
    correct: str

    def __post_init__(self):
        if self.correct not in (self.key.left, self.key.right):
            raise ServiceError("gold answer is not a member of its pair")


@dataclass(slots=True)
class _Assignment:
    left: str
    right: str
    is_gold: bool
    gold_correct: str | None
    quiz_index: int | None     # set for quiz tasks
    key: rk.ComparisonKey | None  # set for real tasks
    expiry: float


@dataclass(slots=True)
class Session:
    id: str
    campaign_id: str
    annotator: str
    phase: SessionPhase = SessionPhase.QUIZ
    quiz_pairs: list[GoldPair] = field(default_factory=list)
    quiz_served: int = 0
    quiz_correct: int = 0
    active_tasks_served: int = 0
    assignment: _Assignment | None = None


@dataclass(slots=True)
class Campaign:
    id: str
    dimension: rk.Dimension
    clip_paths: dict[str, str]
    gold_pairs: list[GoldPair]
    seed: int
    quiz_size: int
    quiz_pass_threshold: float
    gold_rate: int
    ranking: rk.RankingState
    status: CampaignStatus = CampaignStatus.RUNNING
    # key -> {session_id: expiry}
    leases: dict[rk.ComparisonKey, dict[str, float]] = field(default_factory=dict)
    judged: dict[str, set] = field(default_factory=dict)  # annotator -> keys

    @property
    def quiz_pass_needed(self) -> int:
        return math.ceil(self.quiz_pass_threshold * self.quiz_size)


def _key_to_json(key: rk.ComparisonKey) -> list:
    return [key.left, key.right]


class AnnotationService:
    """Single-writer command processor over one append-only log file."""

    def __init__(self, log_path: str | Path,
                 clock: Callable[[], float] = time.time,
                 lease_seconds: float = DEFAULT_LEASE_SECONDS):
        self.log_path = Path(log_path)
        self.clock = clock
        self.lease_seconds = lease_seconds
        self.campaigns: dict[str, Campaign] = {}
        self.sessions: dict[str, Session] = {}
        self._seq = 0
        self._session_counter = 0
        self._replaying = False

    # ---- log plumbing -------------------------------------------------

    def _append(self, record: dict) -> None:
        if self._replaying:
            return
        self._seq += 1
        record = {"seq": self._seq, **record}
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
            fh.flush()

    @classmethod
    def replay(cls, log_path: str | Path,
               clock: Callable[[], float] = time.time,
               lease_seconds: float = DEFAULT_LEASE_SECONDS) -> "AnnotationService":
        """Rebuild service state from the command log."""
        service = cls(log_path, clock=clock, lease_seconds=lease_seconds)
        path = Path(log_path)
        if not path.exists():
            return service
        service._replaying = True
        try:
            for line in path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                record = json.loads(line)
                service._seq = max(service._seq, record.get("seq", 0))
                service._apply(record)
        finally:
            service._replaying = False
        return service

    def _apply(self, record: dict) -> None:
        kind = record["kind"]
        ts = record["ts"]
        if kind == "create_campaign":
            self._do_create_campaign(
                record["campaign"], record["dimension"], record["clips"],
                record["gold"], record["seed"], record["quiz_size"],
                record["quiz_pass_threshold"], record["gold_rate"], ts,
            )
        elif kind == "create_session":
            self._do_create_session(record["campaign"], record["session"],
                                    record["annotator"], ts)
        elif kind == "next_task":
            self._do_next_task(record["session"], ts)
        elif kind == "submit_task":
            self._do_submit(record["session"], record["choice"], ts)
        else:
            raise ServiceError(f"unknown log record kind: {kind}")

    # ---- campaign lifecycle ------------------------------------------

    def create_campaign(self, campaign_id: str, dimension: rk.Dimension,
                        clip_paths: dict[str, str], gold_pairs: list[GoldPair],
                        seed: int, quiz_size: int = DEFAULT_QUIZ_SIZE,
                        quiz_pass_threshold: float = DEFAULT_QUIZ_PASS_THRESHOLD,
                        gold_rate: int = DEFAULT_GOLD_RATE) -> Campaign:
        ts = self.clock()
        campaign = self._do_create_campaign(
            campaign_id, dimension.value, clip_paths,
            [[g.key.left, g.key.right, g.correct] for g in gold_pairs],
            seed, quiz_size, quiz_pass_threshold, gold_rate, ts,
        )
        self._append({
            "ts": ts, "kind": "create_campaign", "campaign": campaign_id,
            "dimension": dimension.value, "clips": clip_paths,
            "gold": [[g.key.left, g.key.right, g.correct] for g in gold_pairs],
            "seed": seed, "quiz_size": quiz_size,
            "quiz_pass_threshold": quiz_pass_threshold, "gold_rate": gold_rate,
        })
        return campaign

    def _do_create_campaign(self, campaign_id, dimension, clip_paths, gold,
                            seed, quiz_size, quiz_pass_threshold, gold_rate,
                            ts) -> Campaign:
        if campaign_id in self.campaigns:
            raise ServiceError(f"duplicate campaign id: {campaign_id}")
        if len(gold) < quiz_size:
            raise ServiceError(
                f"need at least {quiz_size} gold pairs, got {len(gold)}"
            )
        dim = rk.Dimension(dimension)
        gold_pairs = [GoldPair(rk.ComparisonKey(a, b, dim), c) for a, b, c in gold]
        state = rk.init_ranking(sorted(clip_paths), dim, seed)
        campaign_keys = rk.pending_comparisons(state)
        for g in gold_pairs:
            if g.key in campaign_keys:
                raise ServiceError(f"gold pair collides with a campaign comparison: {g.key}")
        campaign = Campaign(
            id=campaign_id, dimension=dim, clip_paths=dict(clip_paths),
            gold_pairs=gold_pairs, seed=seed, quiz_size=quiz_size,
            quiz_pass_threshold=quiz_pass_threshold, gold_rate=gold_rate,
            ranking=state,
        )
        if state.complete:
            campaign.status = CampaignStatus.COMPLETE
        self.campaigns[campaign_id] = campaign
        return campaign

    # ---- sessions -----------------------------------------------------

    def create_session(self, campaign_id: str, annotator: str) -> Session:
        if campaign_id not in self.campaigns:
            raise ServiceError(f"unknown campaign: {campaign_id}")
        ts = self.clock()
        self._session_counter += 1
        session_id = f"{campaign_id}-s{self._session_counter}"
        session = self._do_create_session(campaign_id, session_id, annotator, ts)
        self._append({
            "ts": ts, "kind": "create_session", "campaign": campaign_id,
            "session": session_id, "annotator": annotator,
        })
        return session

    def _do_create_session(self, campaign_id, session_id, annotator, ts) -> Session:
        campaign = self.campaigns[campaign_id]
        self._session_counter = max(
            self._session_counter,
            int(session_id.rsplit("-s", 1)[-1]) if "-s" in session_id else 0,
        )
        session = Session(id=session_id, campaign_id=campaign_id,
                          annotator=annotator)
        rng = random.Random(f"{campaign.seed}|quiz|{session_id}")
        session.quiz_pairs = rng.sample(campaign.gold_pairs, campaign.quiz_size)
        self.sessions[session_id] = session
        return session

    # ---- task serving -------------------------------------------------

    def next_task(self, session_id: str) -> dict:
        session = self._session(session_id)
        ts = self.clock()
        task = self._do_next_task(session_id, ts)
        self._append({"ts": ts, "kind": "next_task", "session": session_id})
        return task

    def _session(self, session_id: str) -> Session:
        if session_id not in self.sessions:
            raise ServiceError(f"unknown session: {session_id}")
        return self.sessions[session_id]

    def _live_assignment(self, session: Session, ts: float) -> _Assignment | None:
        a = session.assignment
        if a is not None and a.expiry > ts:
            return a
        if a is not None:
            self._release(session, ts)
        return None

    def _release(self, session: Session, ts: float) -> None:
        a = session.assignment
        if a is None:
            return
        if a.key is not None:
            campaign = self.campaigns[session.campaign_id]
            campaign.leases.get(a.key, {}).pop(session.id, None)
        session.assignment = None

    def _do_next_task(self, session_id: str, ts: float) -> dict:
        session = self._session(session_id)
        campaign = self.campaigns[session.campaign_id]
        if session.phase in (SessionPhase.BLOCKED, SessionPhase.DONE):
            raise ServiceError(f"session {session_id} is {session.phase.value}")

        live = self._live_assignment(session, ts)
        if live is not None:
            return self._task_view(session, live)

        if session.phase == SessionPhase.QUIZ:
            pair = session.quiz_pairs[session.quiz_served]
            assignment = _Assignment(
                left=pair.key.left, right=pair.key.right, is_gold=True,
                gold_correct=pair.correct, quiz_index=session.quiz_served,
                key=None, expiry=ts + self.lease_seconds,
            )
            session.assignment = assignment
            return self._task_view(session, assignment)

        # ACTIVE: every gold_rate-th task is a gold check
        serve_gold = (session.active_tasks_served + 1) % campaign.gold_rate == 0
        if serve_gold:
            pair = self._pick_gold(campaign, session)
            assignment = _Assignment(
                left=pair.key.left, right=pair.key.right, is_gold=True,
                gold_correct=pair.correct, quiz_index=None, key=None,
                expiry=ts + self.lease_seconds,
            )
        else:
            key = self._pick_real_key(campaign, session, ts)
            if key is None:
                return {"status": "drained", "session": session.id,
                        "phase": session.phase.value}
            campaign.leases.setdefault(key, {})[session.id] = ts + self.lease_seconds
            assignment = _Assignment(
                left=key.left, right=key.right, is_gold=False,
                gold_correct=None, quiz_index=None, key=key,
                expiry=ts + self.lease_seconds,
            )
        session.assignment = assignment
        session.active_tasks_served += 1
        return self._task_view(session, assignment)

    def _pick_gold(self, campaign: Campaign, session: Session) -> GoldPair:
        quiz_keys = {g.key for g in session.quiz_pairs}
        pool = [g for g in campaign.gold_pairs if g.key not in quiz_keys]
        if not pool:
            pool = campaign.gold_pairs
        rng = random.Random(
            f"{campaign.seed}|gold|{session.id}|{session.active_tasks_served}"
        )
        return rng.choice(pool)

    def _pick_real_key(self, campaign: Campaign, session: Session,
                       ts: float) -> rk.ComparisonKey | None:
        already = campaign.judged.get(session.annotator, set())
        for key in sorted(rk.pending_comparisons(campaign.ranking),
                          key=lambda k: (k.left, k.right)):
            if key in already:
                continue
            votes = campaign.ranking.judgments.get(key, [])
            if any(v.annotator == session.annotator for v in votes):
                continue
            leases = campaign.leases.get(key, {})
            live = {sid: exp for sid, exp in leases.items() if exp > ts}
            campaign.leases[key] = live
            if len(votes) + len(live) >= rk.JUDGMENTS_PER_KEY:
                continue
            if any(self.sessions[sid].annotator == session.annotator
                   for sid in live):
                continue
            return key
        return None

    def _task_view(self, session: Session, a: _Assignment) -> dict:
        # the task kind (gold vs real) is deliberately not exposed
        return {
            "status": "task",
            "session": session.id,
            "phase": session.phase.value,
            "clip_a": a.left,
            "clip_b": a.right,
            "quiz_progress": f"{session.quiz_served}/{len(session.quiz_pairs)}"
            if session.phase == SessionPhase.QUIZ else None,
        }

    # ---- submission ---------------------------------------------------

    def submit_task(self, session_id: str, choice: str) -> dict:
        ts = self.clock()
        outcome = self._do_submit(session_id, choice, ts)
        self._append({"ts": ts, "kind": "submit_task", "session": session_id,
                      "choice": choice})
        return outcome

    def _do_submit(self, session_id: str, choice: str, ts: float) -> dict:
        session = self._session(session_id)
        campaign = self.campaigns[session.campaign_id]
        a = self._live_assignment(session, ts)
        if a is None:
            raise ServiceError("no live task lease for this session")
        if choice not in (a.left, a.right):
            raise ServiceError(f"choice {choice!r} is not one of the compared clips")

        if session.phase == SessionPhase.QUIZ:
            session.quiz_served += 1
            if choice == a.gold_correct:
                session.quiz_correct += 1
            self._release(session, ts)
            if session.quiz_served < campaign.quiz_size:
                return {"outcome": "continue", "phase": session.phase.value}
            if session.quiz_correct >= campaign.quiz_pass_needed:
                session.phase = SessionPhase.ACTIVE
                return {"outcome": "quiz_passed",
                        "score": session.quiz_correct,
                        "phase": session.phase.value}
            session.phase = SessionPhase.BLOCKED
            return {"outcome": "quiz_failed", "score": session.quiz_correct,
                    "phase": session.phase.value}

        if a.is_gold:
            self._release(session, ts)
            if choice != a.gold_correct:
                session.phase = SessionPhase.BLOCKED
                return {"outcome": "blocked", "phase": session.phase.value}
            return {"outcome": "continue", "phase": session.phase.value}

        key = a.key
        judgment = rk.Judgment(key=key, annotator=session.annotator,
                               winner=choice, timestamp=ts)
        rk.submit_judgment(campaign.ranking, judgment)
        campaign.judged.setdefault(session.annotator, set()).add(key)
        self._release(session, ts)
        if campaign.ranking.complete:
            campaign.status = CampaignStatus.COMPLETE
        return {"outcome": "continue", "phase": session.phase.value,
                "campaign_complete": campaign.ranking.complete}

    # ---- queries and exports -----------------------------------------

    def progress(self, campaign_id: str) -> dict:
        campaign = self._campaign(campaign_id)
        state = campaign.ranking
        return {
            "campaign": campaign_id,
            "status": campaign.status.value,
            "items": len(state.items),
            "placed": len(state.placed),
            "resolved": len(state.resolved),
            "pending": len(rk.pending_comparisons(state)),
        }

    def _campaign(self, campaign_id: str) -> Campaign:
        if campaign_id not in self.campaigns:
            raise ServiceError(f"unknown campaign: {campaign_id}")
        return self.campaigns[campaign_id]

    def audio_path(self, campaign_id: str, clip_id: str) -> Path:
        campaign = self._campaign(campaign_id)
        if clip_id not in campaign.clip_paths:
            raise ServiceError(f"unknown clip: {clip_id}")
        return Path(campaign.clip_paths[clip_id])

    def export_rankings_csv(self, campaign_id: str) -> str:
        campaign = self._campaign(campaign_id)
        if not campaign.ranking.complete:
            raise ServiceError("rankings are only exportable when complete")
        order = rk.final_ranking(campaign.ranking)
        n = len(order)
        lines = ["rank,clip_id,rating"]
        for rank, clip_id in enumerate(order, start=1):
            lines.append(f"{rank},{clip_id},{rk.rank_to_rating(rank, n)!r}")
        return "\n".join(lines) + "\n"

    def export_ratings_csv(self, campaign_id: str) -> str:
        campaign = self._campaign(campaign_id)
        if not campaign.ranking.complete:
            raise ServiceError("ratings are only exportable when complete")
        order = rk.final_ranking(campaign.ranking)
        n = len(order)
        lines = ["clip_id,rating"]
        for rank, clip_id in enumerate(order, start=1):
            lines.append(f"{clip_id},{rk.rank_to_rating(rank, n)!r}")
        return "\n".join(lines) + "\n"

    def export_reliability(self, campaign_id: str) -> rk.ReliabilityReport:
        campaign = self._campaign(campaign_id)
        judgments = [
            j for key in campaign.ranking.resolved
            for j in campaign.ranking.judgments[key]
        ]
        # gold judgments never enter the ranking state, so none appear here
        return rk.reliability(judgments)

    def export_judgments(self, campaign_id: str) -> str:
        campaign = self._campaign(campaign_id)
        lines = []
        for key in sorted(campaign.ranking.judgments,
                          key=lambda k: (k.left, k.right)):
            for j in campaign.ranking.judgments[key]:
                lines.append(json.dumps({
                    "left": key.left, "right": key.right,
                    "dimension": key.dimension.value,
                    "annotator": j.annotator, "winner": j.winner,
                    "ts": j.timestamp,
                }, separators=(",", ":")))
        return "\n".join(lines) + ("\n" if lines else "")
