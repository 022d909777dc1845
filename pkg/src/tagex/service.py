"""HTTP annotation service driving human-in-the-loop active learning.

A project wraps one corpus and one active-learning session. Profiles
that already carry annotations form the initial labeled set; the rest
are the unlabeled pool. Lifecycle:

    IDLE --POST /rounds--> TRAINING --(committee done)--> AWAITING_LABELS
       --(all B annotations in)--> TRAINING --> ... --> DONE

Every state change is appended to the project's event log and the
snapshot is rewritten before the triggering request is acknowledged, so
a restarted process resumes exactly where it stopped. Training runs on
one background worker per project; a per-project lock serializes state.
"""

from __future__ import annotations

import json
import os
import threading
import uuid

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import active as active_mod
from . import corpus as corpus_mod
from . import trainer as trainer_mod
from .errors import TagexError

VERSION = "v1"

IDLE = "IDLE"
TRAINING = "TRAINING"
AWAITING_LABELS = "AWAITING_LABELS"
DONE = "DONE"


class AnnotationIn(BaseModel):
    sample_id: str
    tags: list

    model_config = {"extra": "ignore"}


class Project:
    def __init__(self, project_id, store_dir, corpus_path, model_config,
                 al_config):
        self.id = project_id
        self.dir = os.path.join(store_dir, project_id)
        os.makedirs(self.dir, exist_ok=True)
        self.corpus_path = corpus_path
        self.model_config = model_config
        self.al_config = al_config
        self.lock = threading.RLock()
        self.status = IDLE
        self.round_index = 0
        self.pending = None   # {"queried": [...], "scores": {}, "prior": {},
                              #  "attention": {}, "received": {}}
        self.run: active_mod.ActiveRun | None = None
        self.worker: threading.Thread | None = None
        self.error: str | None = None

    # -- persistence -------------------------------------------------------

    def _event(self, kind, **payload):
        record = {"event": kind, "project": self.id, **payload}
        with open(os.path.join(self.dir, "events.jsonl"), "a",
                  encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def _persist(self):
        state = self.run.state if self.run else None
        snapshot = {
            "version": VERSION,
            "id": self.id,
            "corpus": self.corpus_path,
            "model_config": self.model_config.to_json(),
            "al_config": self.al_config.to_json(),
            "status": self.status,
            "round_index": self.round_index,
            "pending": self.pending,
            "error": self.error,
            "state": None if state is None else {
                "labeled_ids": state.labeled_ids,
                "unlabeled_ids": state.unlabeled_ids,
                "labels": state.labels,
                "history": state.history,
            },
        }
        tmp = os.path.join(self.dir, "snapshot.json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(snapshot, fh, sort_keys=True)
        os.replace(tmp, os.path.join(self.dir, "snapshot.json"))

    def _save_model(self):
        trainer_mod.save_checkpoint(self.run.model,
                                    os.path.join(self.dir, "model.ckpt"))

    # -- session setup -----------------------------------------------------

    def build_run(self, restored_state=None):
        profiles = corpus_mod.load_corpus(self.corpus_path)
        samples = [p.to_sample() for p in profiles]
        labeled = [s.id for s in samples if any(s.spans.values())]
        if not self.model_config.attributes:
            attrs = sorted({a for s in samples for a in s.spans})
            if not attrs:
                raise TagexError("corpus carries no annotated attributes")
            self.model_config.attributes = tuple(attrs)
        self.run = active_mod.ActiveRun(
            samples, self.model_config, self.al_config,
            seed=self.model_config.seed, initial_labeled_ids=labeled)
        if restored_state is not None:
            self.run.state = active_mod.ActiveLearningState(
                labeled_ids=restored_state["labeled_ids"],
                unlabeled_ids=restored_state["unlabeled_ids"],
                labels=restored_state["labels"],
                history=restored_state["history"])
            ckpt = os.path.join(self.dir, "model.ckpt")
            if os.path.exists(ckpt):
                loaded = trainer_mod.load_checkpoint(ckpt)
                self.run.model.load_arrays(loaded.named_arrays())

    # -- round machinery ---------------------------------------------------

    def start_training(self):
        """Launch the committee phase on the worker thread."""
        self.status = TRAINING
        self.error = None
        self._event("round_started", round=self.round_index)
        self._persist()
        self.worker = threading.Thread(target=self._train_round, daemon=True)
        self.worker.start()

    def _train_round(self):
        try:
            records, queried, scores = self.run.committee_phase()
            prior, attention = {}, {}
            scheme = self.run.model.scheme
            for sample_id in queried:
                sample = self.run.samples[sample_id]
                prediction = trainer_mod.predict(self.run.model, sample.tokens)
                prior[sample_id] = prediction.tags
                if prediction.attention is not None:
                    attention[sample_id] = [
                        [float(x) for x in row]
                        for row in prediction.attention.matrix]
            with self.lock:
                self.pending = {
                    "queried": list(queried),
                    "scores": {i: float(scores[i]) for i in queried},
                    "prior": prior,
                    "attention": attention,
                    "received": {},
                }
                self.status = AWAITING_LABELS
                self._save_model()
                self._event("queries_ready", round=self.round_index,
                            queried=list(queried))
                self._persist()
        except Exception as exc:  # surface the failure to clients
            with self.lock:
                self.status = DONE
                self.error = str(exc)
                self._event("round_failed", error=str(exc))
                self._persist()

    def submit_annotation(self, sample_id, tags):
        """Validate and store one annotation; advance when B are in.

        Returns (http_status, payload).
        """
        with self.lock:
            if self.status != AWAITING_LABELS:
                return 409, {"version": VERSION, "status": self.status,
                             "detail": "project is not awaiting labels"}
            if sample_id not in self.pending["queried"]:
                if sample_id in self.run.state.labels:
                    return 409, {"version": VERSION,
                                 "detail": f"{sample_id} is already labeled"}
                return 404, {"version": VERSION,
                             "detail": f"{sample_id} is not in the query batch"}
            if sample_id in self.pending["received"]:
                return 409, {"version": VERSION,
                             "detail": f"{sample_id} is already labeled"}
            tokens = self.run.samples[sample_id].tokens
            if len(tags) != len(tokens):
                return 422, {"version": VERSION, "position": len(tokens),
                             "detail": f"expected {len(tokens)} tags, "
                                       f"got {len(tags)}"}
            valid = set(self.run.model.scheme.tags)
            for position, tag in enumerate(tags):
                if tag not in valid:
                    return 422, {"version": VERSION, "position": position,
                                 "detail": f"tag {tag!r} at position "
                                           f"{position} is not in the scheme"}
            self.pending["received"][sample_id] = list(tags)
            self._event("annotation", sample_id=sample_id, tags=list(tags))
            self._persist()
            if set(self.pending["received"]) == set(self.pending["queried"]):
                self._finish_round()
            return 200, {"version": VERSION, "status": self.status,
                         "received": len(self.pending["received"])
                         if self.pending else None}

    def _finish_round(self):
        queried = self.pending["queried"]
        answers = self.pending["received"]
        scores = self.pending["scores"]
        self.run.apply_labels(queried, answers, scores)
        self.round_index += 1
        self._event("round_completed", round=self.round_index - 1)
        self.pending = None
        self._save_model()
        if self.run.should_stop():
            self.status = DONE
            self._event("done")
            self._persist()
        else:
            self.start_training()

    # -- views -------------------------------------------------------------

    def queries_payload(self):
        with self.lock:
            if self.status != AWAITING_LABELS:
                return 409, {"version": VERSION, "status": self.status,
                             "detail": "no query batch available",
                             "error": self.error}
            batch = []
            for sample_id in self.pending["queried"]:
                if sample_id in self.pending["received"]:
                    continue
                entry = {
                    "sample_id": sample_id,
                    "tokens": self.run.samples[sample_id].tokens,
                    "strategy_score": self.pending["scores"][sample_id],
                    "prior_prediction_tags": self.pending["prior"][sample_id],
                }
                if sample_id in self.pending["attention"]:
                    entry["attention_matrix"] = self.pending["attention"][sample_id]
                batch.append(entry)
            return 200, {"version": VERSION, "status": self.status,
                         "scheme_tags": list(self.run.model.scheme.tags),
                         "batch": batch}

    def metrics_payload(self):
        with self.lock:
            history = self.run.state.history if self.run else []
            return {"version": VERSION, "status": self.status,
                    "round_index": self.round_index, "history": history,
                    "labeled_count": len(self.run.state.labeled_ids)
                    if self.run else 0,
                    "labels": dict(self.run.state.labels) if self.run else {},
                    "error": self.error}

    def attention_payload(self, sample_id):
        with self.lock:
            if (self.pending and sample_id in self.pending["attention"]):
                return 200, {"version": VERSION,
                             "tokens": self.run.samples[sample_id].tokens,
                             "matrix": self.pending["attention"][sample_id]}
            if self.run and sample_id in self.run.samples:
                prediction = trainer_mod.predict(
                    self.run.model, self.run.samples[sample_id].tokens)
                if prediction.attention is None:
                    return 409, {"version": VERSION,
                                 "detail": "model variant has no attention"}
                return 200, {"version": VERSION,
                             "tokens": prediction.tokens,
                             "matrix": [[float(x) for x in row]
                                        for row in prediction.attention.matrix]}
            return 404, {"version": VERSION,
                         "detail": f"unknown sample {sample_id!r}"}


def _load_projects(store_dir):
    projects = {}
    if not os.path.isdir(store_dir):
        return projects
    for name in sorted(os.listdir(store_dir)):
        snap_path = os.path.join(store_dir, name, "snapshot.json")
        if not os.path.exists(snap_path):
            continue
        with open(snap_path, "r", encoding="utf-8") as fh:
            snap = json.load(fh)
        project = Project(
            snap["id"], store_dir, snap["corpus"],
            trainer_mod.ModelConfig.from_json(snap["model_config"]),
            active_mod.ALConfig.from_json(snap["al_config"]))
        project.status = snap["status"]
        project.round_index = snap["round_index"]
        project.pending = snap["pending"]
        project.error = snap.get("error")
        project.build_run(restored_state=snap["state"])
        if project.status == TRAINING:
            # the process died mid-round; rerun the committee phase
            project.start_training()
        projects[project.id] = project
    return projects


def create_app(store_dir) -> FastAPI:
    os.makedirs(store_dir, exist_ok=True)
    app = FastAPI(title="tagex annotation service")
    projects = _load_projects(store_dir)
    app.state.projects = projects

    def _get(project_id):
        return projects.get(project_id)

    @app.post("/projects")
    def create_project(body: dict):
        try:
            corpus_path = body["corpus"]
            model_config = trainer_mod.ModelConfig.from_json(
                body.get("model_config", {}))
            al_config = active_mod.ALConfig.from_json(body.get("al_config", {}))
            al_config.validate()
            project_id = body.get("project_id") or uuid.uuid4().hex[:12]
            project = Project(project_id, store_dir, corpus_path,
                              model_config, al_config)
            project.build_run()
            project._event("project_created", corpus=corpus_path)
            project._persist()
            projects[project_id] = project
        except (TagexError, KeyError, OSError) as exc:
            return JSONResponse(status_code=422,
                                content={"version": VERSION,
                                         "detail": str(exc)})
        return {"version": VERSION, "project_id": project_id}

    @app.post("/projects/{project_id}/rounds")
    def start_round(project_id: str):
        project = _get(project_id)
        if project is None:
            return JSONResponse(status_code=404,
                                content={"version": VERSION,
                                         "detail": "unknown project"})
        with project.lock:
            if project.status != IDLE:
                return JSONResponse(
                    status_code=409,
                    content={"version": VERSION, "status": project.status,
                             "detail": "rounds can only start from IDLE"})
            project.start_training()
        return {"version": VERSION, "status": project.status}

    @app.get("/projects/{project_id}/queries")
    def get_queries(project_id: str):
        project = _get(project_id)
        if project is None:
            return JSONResponse(status_code=404,
                                content={"version": VERSION,
                                         "detail": "unknown project"})
        status, payload = project.queries_payload()
        if status != 200:
            return JSONResponse(status_code=status, content=payload)
        return payload

    @app.post("/projects/{project_id}/annotations")
    def post_annotation(project_id: str, body: AnnotationIn):
        project = _get(project_id)
        if project is None:
            return JSONResponse(status_code=404,
                                content={"version": VERSION,
                                         "detail": "unknown project"})
        status, payload = project.submit_annotation(body.sample_id,
                                                    list(body.tags))
        if status != 200:
            return JSONResponse(status_code=status, content=payload)
        return payload

    @app.get("/projects/{project_id}/metrics")
    def get_metrics(project_id: str):
        project = _get(project_id)
        if project is None:
            return JSONResponse(status_code=404,
                                content={"version": VERSION,
                                         "detail": "unknown project"})
        return project.metrics_payload()

    @app.get("/projects/{project_id}/attention/{sample_id}")
    def get_attention(project_id: str, sample_id: str):
        project = _get(project_id)
        if project is None:
            return JSONResponse(status_code=404,
                                content={"version": VERSION,
                                         "detail": "unknown project"})
        status, payload = project.attention_payload(sample_id)
        if status != 200:
            return JSONResponse(status_code=status, content=payload)
        return payload

    @app.get("/projects/{project_id}")
    def get_project(project_id: str):
        project = _get(project_id)
        if project is None:
            return JSONResponse(status_code=404,
                                content={"version": VERSION,
                                         "detail": "unknown project"})
        return project.metrics_payload()

    return app
