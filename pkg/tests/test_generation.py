import hashlib
import json

import pytest

from selfdocs.core import GENREAD, WIKI, DocType, Document, Query, Source, Task, parse_sfl_code
from selfdocs.dataset_io import load_dataset
from selfdocs.embed_cluster import Shot, ShotPool
from selfdocs.errors import BackendEmptyResponse, BackendError, PreconditionError, TooManyShots
from selfdocs.gateway import ChatRequest, FunctionBackend, Gateway, ReplayBackend, chat_cache_key
from selfdocs.generation import (
    DocStore,
    GenerationConfig,
    Mode,
    StoreRecord,
    build_shot_pool,
    generate_corpus,
    generate_self_docs,
    generation_manifest,
    style_align_shots,
)
from selfdocs.prompts import render_style_transform

AFU = parse_sfl_code("AFU")


def hashed_vector(text):
    h = hashlib.sha256(text.encode()).digest()
    return [b / 255.0 + 0.01 for b in h[:8]]


def echo_backend(fail=None):
    """Echoes the user prompt back; ``fail(req)`` may raise to simulate errors."""

    def chat(req):
        if fail is not None:
            fail(req)
        return "ECHO:" + req.messages[-1].content

    return FunctionBackend(chat, hashed_vector)


def pairs(n, task=Task.OPEN_DOMAIN_QA):
    return [
        (Query(f"s{i}", f"shot question {i}", task),
         Document(f"s{i}#1", f"gold doc {i}", WIKI, Source.RETRIEVED, f"s{i}", rank=1))
        for i in range(n)
    ]


def grouped_vector(text):
    # "shot question i ..." lands in one of ten tight groups (i mod 10)
    i = int(text.split()[2])
    v = [0.0] * 10
    v[i % 10] = 1.0
    v[(i + 3) % 10] += 0.01 * (i // 10)
    return v


def test_build_shot_pool_shape_and_determinism():
    gw = Gateway(FunctionBackend(embed_fn=grouped_vector))
    cfg = GenerationConfig(k_clusters=10, m_shots=5, seed=3)
    p1 = build_shot_pool(pairs(50), cfg, gw)
    assert (p1.k, p1.m, p1.style) == (10, 5, None)
    assert len({s.query_id for lst in p1.shots for s in lst}) == 50
    assert all(len({int(s.query_id[1:]) % 10 for s in lst}) == 1 for lst in p1.shots)
    p2 = build_shot_pool(pairs(50), cfg, Gateway(FunctionBackend(embed_fn=grouped_vector)))
    assert p1.to_json() == p2.to_json()


def test_build_shot_pool_degenerate_and_too_few():
    gw = Gateway(echo_backend())
    pool = build_shot_pool(pairs(1), GenerationConfig(n_docs=1, k_clusters=1, m_shots=1), gw)
    assert pool.shots == ((Shot("s0", "shot question 0", "gold doc 0"),),)
    with pytest.raises(PreconditionError):
        build_shot_pool(pairs(5), GenerationConfig(n_docs=1, k_clusters=2, m_shots=3), gw)


def small_pool():
    return ShotPool(
        shots=((Shot("a", "qa?", "doc a"),), (Shot("b", "qb?", "doc b"),)),
        seed=0,
    )


def test_style_align_with_hand_written_replay(tmp_path):
    pool = small_pool()
    lines = []
    for shot, rewrite in zip([s for l in pool.shots for s in l], ["AFU version of a", "AFU version of b"]):
        prompt = render_style_transform(Task.OPEN_DOMAIN_QA, AFU, shot.document, shot.query)
        req = ChatRequest.from_prompt(prompt, "rewriter", 0.0, 1024)
        lines.append(json.dumps({"digest": chat_cache_key(req), "completion": rewrite}))
    trace = tmp_path / "rewrites.jsonl"
    trace.write_text("\n".join(lines) + "\n")
    aligned = style_align_shots(pool, AFU, Task.OPEN_DOMAIN_QA, Gateway(ReplayBackend([trace])), model_id="rewriter")
    assert aligned.style == AFU
    assert [s.document for l in aligned.shots for s in l] == ["AFU version of a", "AFU version of b"]
    assert [s.query for l in aligned.shots for s in l] == ["qa?", "qb?"]
    with pytest.raises(PreconditionError):
        style_align_shots(aligned, AFU, Task.OPEN_DOMAIN_QA, Gateway(echo_backend()))


def test_style_align_empty_response_fails_pool():
    gw = Gateway(FunctionBackend(lambda r: ""))
    with pytest.raises(BackendEmptyResponse):
        style_align_shots(small_pool(), AFU, Task.OPEN_DOMAIN_QA, gw)


def ten_cluster_pool(target_id=None):
    lists = []
    for c in range(10):
        shots = [Shot(f"c{c}s{j}", f"cluster {c} question {j}", f"cluster {c} doc {j}") for j in range(3)]
        if target_id is not None and c == 4:
            shots[1] = Shot(target_id, "the target question", "TARGET GOLD DOC")
        lists.append(tuple(shots))
    return ShotPool(tuple(lists), seed=0)


def test_genread_generation_isolation_and_replicates():
    gw = Gateway(echo_backend())
    q = Query("t1", "the target question", Task.OPEN_DOMAIN_QA)
    cfg = GenerationConfig(n_docs=10, k_clusters=10, m_shots=3)
    docs = generate_self_docs(q, ten_cluster_pool("t1"), cfg, gw)
    assert [d.replicate_index for d in docs] == list(range(10))
    assert all(d.source is Source.SELF_GENERATED and d.doc_type == GENREAD for d in docs)
    for i, d in enumerate(docs):
        assert q.text in d.text
        assert "TARGET GOLD DOC" not in d.text
        assert f"cluster {i} doc" in d.text
        expected_blocks = 2 if i == 4 else 3
        assert d.text.count("Provide a background document from Wikipedia") == expected_blocks + 1


def test_typed_zero_shot_has_no_retrieved_text():
    gw = Gateway(echo_backend())
    q = Query("t1", "who?", Task.MULTI_HOP_QA)
    cfg = GenerationConfig(n_docs=3, style=parse_sfl_code("CCS"), mode=Mode.TYPED_ZERO_SHOT)
    docs = generate_self_docs(q, None, cfg, gw)
    assert [d.replicate_index for d in docs] == [0, 1, 2]
    assert all(d.doc_type == DocType.of(parse_sfl_code("CCS")) for d in docs)
    assert all("WIKI-SENTINEL" not in d.text and "who?" in d.text for d in docs)


def test_warm_cache_second_call_issues_no_requests():
    gw = Gateway(echo_backend())
    q = Query("t1", "who?", Task.OPEN_DOMAIN_QA)
    cfg = GenerationConfig(n_docs=1, style=AFU, mode=Mode.TYPED_ZERO_SHOT)
    first = generate_self_docs(q, None, cfg, gw)
    n = len(gw.calls)
    assert generate_self_docs(q, None, cfg, gw) == first and len(gw.calls) == n


def test_per_replicate_failure_is_recorded():
    def fail(req):
        if "cluster 2 " in req.messages[-1].content:
            raise BackendError("server said no")

    gw = Gateway(echo_backend(fail))
    q = Query("x", "some question", Task.OPEN_DOMAIN_QA)
    cfg = GenerationConfig(n_docs=4, k_clusters=10, m_shots=3)
    store = DocStore()
    docs = generate_self_docs(q, ten_cluster_pool(), cfg, gw, store=store)
    assert [d.replicate_index for d in docs] == [0, 1, 3]
    assert list(docs.failures) == [2]
    assert len(docs) + len(docs.failures) == cfg.n_docs
    assert ("x", "GENREAD", 2) in store.failures


def test_config_invariants():
    with pytest.raises(PreconditionError):
        GenerationConfig(n_docs=11, k_clusters=10)
    with pytest.raises(PreconditionError):
        GenerationConfig(mode=Mode.TYPED_ZERO_SHOT)
    with pytest.raises(PreconditionError):
        GenerationConfig(temperature=2.5)
    with pytest.raises(TooManyShots):
        GenerationConfig(m_shots=6)
    assert GenerationConfig().temperature == 0.95


def _doc(qid="q/1", rep=0, text="hello ✓"):
    return Document("ignored", text, DocType.of(AFU), Source.SELF_GENERATED, qid, rep)


def test_docstore_persistence_round_trip(tmp_path):
    store = DocStore.open(tmp_path, "m1")
    stored = store.put(_doc(), "model", "pd")
    assert store.put(_doc(text="other"), "model", "pd").text == "hello ✓"
    store.put(_doc(rep=1), "model", "pd")
    reopened = DocStore(tmp_path / "m1", "m1")
    assert reopened.documents() == store.documents()
    assert reopened.digest() == store.digest()
    files = sorted(p.name for p in (tmp_path / "m1").glob("*.json"))
    assert files == ["q%2F1.AFU.0.json", "q%2F1.AFU.1.json"]
    raw = (tmp_path / "m1" / files[0]).read_text(encoding="utf-8")
    assert StoreRecord.from_json(raw, "m1").to_json() == raw
    assert set(json.loads(raw)) == {"text", "doc_type", "source", "origin_query_id", "replicate_index",
                                    "model_id", "prompt_digest", "created_at"}
    assert stored.id == reopened.get("q/1", DocType.of(AFU), 0).id


def test_docstore_rejects_retrieved_documents():
    with pytest.raises(PreconditionError):
        DocStore().put(Document("w", "t", WIKI, Source.RETRIEVED, "q", rank=1))


def write_dataset(path, n, task=Task.OPEN_DOMAIN_QA):
    with open(path, "w") as f:
        for i in range(n):
            f.write(json.dumps({"id": f"q{i}", "question": f"question {i}?", "answers": [f"a{i}"],
                                "retrieved": [{"rank": 1, "text": f"wiki {i}"}]}) + "\n")
    return load_dataset(path, task)


def test_generate_corpus_rerun_is_free(tmp_path):
    ds = write_dataset(tmp_path / "d.jsonl", 4)
    cfg = GenerationConfig(n_docs=2, style=AFU, mode=Mode.TYPED_ZERO_SHOT)
    mid = generation_manifest(ds, cfg, None).manifest_id
    gw = Gateway(echo_backend())
    report = generate_corpus(ds, cfg, gw, DocStore.open(tmp_path / "stores", mid))
    assert (report.n_generated, report.n_failed, report.exceeded) == (8, 0, False)
    digest = report.store.digest()
    manifest = (tmp_path / "stores" / mid / "manifest.json").read_text()
    gw2 = Gateway(FunctionBackend())
    again = generate_corpus(ds, cfg, gw2, DocStore.open(tmp_path / "stores", mid))
    assert gw2.calls == []
    assert again.store.digest() == digest
    assert (tmp_path / "stores" / mid / "manifest.json").read_text() == manifest


def test_generate_corpus_empty_dataset(tmp_path):
    ds = write_dataset(tmp_path / "d.jsonl", 0)
    report = generate_corpus(ds, GenerationConfig(n_docs=1, style=AFU, mode=Mode.TYPED_ZERO_SHOT),
                             Gateway(FunctionBackend()), DocStore())
    assert len(report.store) == 0 and not report.exceeded


def test_generate_corpus_failure_threshold(tmp_path):
    ds = write_dataset(tmp_path / "d.jsonl", 10)

    def fail(req):
        if "question 3?" in req.messages[-1].content:
            raise BackendError("nope")

    cfg = GenerationConfig(n_docs=1, style=AFU, mode=Mode.TYPED_ZERO_SHOT)
    report = generate_corpus(ds, cfg, Gateway(echo_backend(fail)), DocStore())
    assert report.failure_rate == pytest.approx(0.1) and report.exceeded
    lenient = generate_corpus(ds, cfg, Gateway(echo_backend(fail)), DocStore(), failure_threshold=0.2)
    assert not lenient.exceeded


def test_manifest_changes_with_config(tmp_path):
    ds = write_dataset(tmp_path / "d.jsonl", 1)
    a = generation_manifest(ds, GenerationConfig(n_docs=1, style=AFU, mode=Mode.TYPED_ZERO_SHOT), None)
    b = generation_manifest(ds, GenerationConfig(n_docs=1, style=AFU, mode=Mode.TYPED_ZERO_SHOT, temperature=0.9), None)
    assert a.manifest_id != b.manifest_id
