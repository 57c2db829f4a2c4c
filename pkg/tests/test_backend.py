import json
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from groundkit.backend import (
    BackendConfig,
    BackendError,
    HttpClient,
    HttpGroundingBackend,
    HttpYesScorer,
    IntersectOracleScorer,
    NoiseConfig,
    OracleBackend,
    RetryPolicy,
    ScoringFailure,
    ScriptedBackend,
    TransportError,
    build_chat_request,
    http_ground,
    http_yes_score,
    parse_point,
    request_hash,
    request_key,
    split_think_answer,
)
from groundkit.backend.fixture_server import FixtureServer, write_fixture
from groundkit.backend.http import affirmative_logprob
from groundkit.backend.testing import NOT_VISIBLE
from groundkit.geometry import BBox, CropWindow, Point, Size
from groundkit.raster import coordinate_canvas
from groundkit.resampler import crop_raster

# ---------------------------------------------------------------- parsing


@pytest.mark.parametrize(
    "text, expected",
    [
        ("click(123, 456)", (123, 456)),
        ("<think>short</think> [40, 80]", (40, 80)),
        ("I cannot find it", None),
        ('{"x": 12, "y": 34}', (12, 34)),
        ('answer: {"y": 5, "x": 7, "why": "icon"}', (7, 5)),
        ("tap(x=10, y=20)", (10, 20)),
        ("(3.4, 7.5)", (3, 8)),
        ("CLICK ( 1 ,2 )", (1, 2)),
        ("move to -5, 3", None),
        ("point at (10, -3)", None),
    ],
)
def test_parse_point(text, expected):
    p = parse_point(text)
    assert (None if p is None else p.as_tuple()) == expected


def test_parse_point_priority_within_same_span():
    # the JSON object and the call end at different places; the first one to close wins
    assert parse_point('click(1, 2) then {"x": 9, "y": 9}').as_tuple() == (1, 2)
    assert parse_point('{"x": 9, "y": 9} then click(1, 2)').as_tuple() == (9, 9)
    # a call wraps a bare pair of the same digits only when named
    assert parse_point("press(4, 5)").as_tuple() == (4, 5)


@pytest.mark.parametrize(
    "text, thought, answer",
    [
        ("<think>go left.</think> click(1,2)", "go left.", "click(1,2)"),
        ("click(1,2)", "", "click(1,2)"),
        ("<think>abc click(1,2)", "abc click(1,2)", ""),
        ("I see it. click(3,4)", "I see it.", "click(3,4)"),
    ],
)
def test_split_think_answer(text, thought, answer):
    t, a = split_think_answer(text)
    assert (t.text, a) == (thought, answer)


def test_unclosed_think_has_no_point():
    assert parse_point("<think>abc click(1,2)") is None


pieces = st.sampled_from(
    ["click(", "(", ")", "[", "]", ", ", "1", "23", "4.5", "x=", "y=", "{", "}", '"x": ', '"y": ', " ", "tap", "ok."]
)


@given(st.lists(pieces, max_size=14).map("".join), st.text(max_size=30), st.lists(pieces, max_size=8).map("".join))
def test_trailing_text_never_changes_a_match(prefix, junk, more):
    p = parse_point(prefix)
    if p is not None:
        assert parse_point(prefix + junk) == p
        assert parse_point(prefix + more) == p


# ---------------------------------------------------------------- scripted / oracle


def test_scripted_backend(tmp_path):
    img = coordinate_canvas(Size(20, 10))
    key = request_key(img, "a")
    (tmp_path / f"{key}.json").write_text(json.dumps({"response": "click(1, 2)"}))
    other = request_key(img, "b")
    (tmp_path / f"{other}.json").write_text(json.dumps({"error": "gateway", "status": 502}))
    backend = ScriptedBackend.from_dir(tmp_path)
    assert backend.ground(img, "a") == "click(1, 2)"
    with pytest.raises(TransportError) as err:
        backend.ground(img, "b")
    assert err.value.status == 502
    with pytest.raises(BackendError):
        backend.ground(img, "c")
    assert ScriptedBackend(default="x").ground(img, "c") == "x"


def test_oracle_answers_center_when_visible():
    canvas = coordinate_canvas(Size(400, 300))
    box = BBox(210, 120, 230, 140)
    oracle = OracleBackend({"t": box})
    assert oracle.ground(canvas, "t") == "click(220, 130)"
    crop = crop_raster(canvas, CropWindow.from_xywh(200, 100, 100, 100))
    assert oracle.ground(crop, "t") == "click(20, 30)"
    partial = crop_raster(canvas, CropWindow.from_xywh(220, 100, 100, 100))
    assert oracle.ground(partial, "t") == NOT_VISIBLE
    with pytest.raises(BackendError):
        oracle.ground(canvas, "unknown")
    with pytest.raises(BackendError):
        oracle.ground(np.zeros((10, 10, 3), np.uint8) + 7, "t")


def test_oracle_noise_is_seeded():
    canvas = coordinate_canvas(Size(800, 600))
    box = BBox(10, 10, 60, 40)
    noise = NoiseConfig("peripheral", noise_px=2, noise_gain=0.1)
    a = [OracleBackend({"t": box}, noise, seed=3).ground(canvas, "t") for _ in range(3)]
    b = OracleBackend({"t": box}, noise, seed=4).ground(canvas, "t")
    assert len(set(a)) == 1
    assert b != a[0]


def test_peripheral_noise_grows_off_center():
    n = NoiseConfig("peripheral", noise_px=1, noise_gain=0.5)
    size = Size(100, 100)
    assert n.magnitude((50, 50), size) == 1
    assert n.magnitude((90, 50), size) == pytest.approx(21)
    assert NoiseConfig("uniform", noise_px=3).magnitude((0, 0), size) == 3
    with pytest.raises(ValueError):
        NoiseConfig("gaussian")


def test_intersect_scorer():
    canvas = coordinate_canvas(Size(200, 200))
    scorer = IntersectOracleScorer({"t": BBox(50, 50, 60, 60)})
    assert scorer.score(crop_raster(canvas, CropWindow.from_xywh(55, 55, 10, 10)), "t") == 1.0
    assert scorer.score(crop_raster(canvas, CropWindow.from_xywh(60, 60, 5, 5)), "t") == 1.0
    assert scorer.score(crop_raster(canvas, CropWindow.from_xywh(40, 40, 10, 10)), "t") == 0.0
    assert scorer.score(crop_raster(canvas, CropWindow.from_xywh(61, 0, 10, 10)), "t") == 0.0
    with pytest.raises(ScoringFailure):
        scorer.score(canvas, "nope")


# ---------------------------------------------------------------- http


def chat_reply(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def logprob_reply(top, token="No", logprob=-1.0):
    return {"choices": [{
        "message": {"role": "assistant", "content": token},
        "logprobs": {"content": [{"token": token, "logprob": logprob,
                                  "top_logprobs": [{"token": t, "logprob": v} for t, v in top.items()]}]},
    }]}


IMG = coordinate_canvas(Size(16, 12))


def cfg_for(server, **kw):
    kw.setdefault("retry_policy", RetryPolicy(max_retries=2, backoff_base=0.0))
    return BackendConfig(endpoint_url=server.url, model_name="m", request_timeout=kw.pop("timeout", 2.0), **kw)


def test_request_shape():
    cfg = BackendConfig()
    body = build_chat_request(IMG, "hello", cfg)
    parts = body["messages"][0]["content"]
    assert parts[0]["image_url"]["url"].startswith("data:image/png;base64,")
    assert parts[1] == {"type": "text", "text": "hello"}
    scored = build_chat_request(IMG, "hello", cfg, logprobs=True)
    assert scored["logprobs"] is True and scored["top_logprobs"] == 20 and scored["max_tokens"] == 1
    assert request_hash(body) == request_hash(json.loads(json.dumps(body)))


def test_http_roundtrip_and_retry():
    cfg0 = BackendConfig(endpoint_url="http://127.0.0.1:1/x", model_name="m")
    ok = build_chat_request(IMG, "p1", cfg0)
    flaky = build_chat_request(IMG, "p2", cfg0)
    fixtures = {
        request_hash(ok): {"status": 200, "body": chat_reply("click(3, 4)")},
        request_hash(flaky): {"status": 503, "body": {"error": "busy"}},
    }
    with FixtureServer(fixtures) as server:
        cfg = cfg_for(server)
        assert http_ground(IMG, "p1", cfg) == "click(3, 4)"
        with pytest.raises(TransportError) as err:
            http_ground(IMG, "p2", cfg)
        assert err.value.status == 503 and err.value.retryable and err.value.attempts == 3
        assert server.hits[request_hash(flaky)] == 3


def test_http_4xx_not_retried():
    cfg0 = BackendConfig(endpoint_url="http://127.0.0.1:1/x", model_name="m")
    body = build_chat_request(IMG, "big", cfg0)
    with FixtureServer({request_hash(body): {"status": 413, "body": {"error": "too large"}}}) as server:
        with pytest.raises(TransportError) as err:
            http_ground(IMG, "big", cfg_for(server))
        assert err.value.status == 413 and not err.value.retryable and err.value.attempts == 1
        assert server.hits[request_hash(body)] == 1


def test_http_timeout():
    cfg0 = BackendConfig(endpoint_url="http://127.0.0.1:1/x", model_name="m")
    body = build_chat_request(IMG, "slow", cfg0)
    with FixtureServer({request_hash(body): {"status": 200, "body": chat_reply("(1,1)"), "delay": 0.5}}) as server:
        cfg = cfg_for(server, timeout=0.1, retry_policy=RetryPolicy(max_retries=1, backoff_base=0.0))
        with pytest.raises(TransportError) as err:
            http_ground(IMG, "slow", cfg)
        assert err.value.retryable and err.value.attempts == 2


def test_connection_refused_is_transport_error():
    cfg = BackendConfig(endpoint_url="http://127.0.0.1:9/none", model_name="m",
                        retry_policy=RetryPolicy(max_retries=0))
    with pytest.raises(TransportError):
        http_ground(IMG, "x", cfg)


def test_malformed_body():
    cfg0 = BackendConfig(endpoint_url="http://127.0.0.1:1/x", model_name="m")
    a = build_chat_request(IMG, "a", cfg0)
    b = build_chat_request(IMG, "b", cfg0)
    fixtures = {
        request_hash(a): {"status": 200, "raw": "not json"},
        request_hash(b): {"status": 200, "body": {"choices": []}},
    }
    with FixtureServer(fixtures) as server:
        for prompt in ("a", "b"):
            with pytest.raises(TransportError):
                http_ground(IMG, prompt, cfg_for(server))


@pytest.mark.parametrize(
    "top, expected",
    [({"Yes": -0.1, "No": -2.3}, -0.1), ({"YES": -0.2}, -0.2), ({" yes": -0.4, "Yes": -0.7}, -0.4),
     ({"No": -0.1, "Maybe": -3}, None)],
)
def test_affirmative_logprob(top, expected):
    payload = logprob_reply(top)
    if expected is None:
        with pytest.raises(ScoringFailure):
            affirmative_logprob(payload)
    else:
        assert affirmative_logprob(payload) == expected


def test_generated_token_counts_as_alternative():
    assert affirmative_logprob(logprob_reply({"No": -2.0}, token="Yes", logprob=-0.05)) == -0.05


def test_missing_logprobs_is_scoring_failure():
    with pytest.raises(ScoringFailure):
        affirmative_logprob(chat_reply("Yes"))


def test_http_yes_score_and_backends(monkeypatch):
    cfg0 = BackendConfig(endpoint_url="http://127.0.0.1:1/x", model_name="m", api_key_env="GK_TEST_KEY")
    prompt = cfg0.selection_prompt_template.format(instruction="save")
    body = build_chat_request(IMG, prompt, cfg0, logprobs=True)
    gbody = build_chat_request(IMG, cfg0.grounding_prompt_template.format(instruction="save"), cfg0)
    fixtures = {
        request_hash(body): {"status": 200, "body": logprob_reply({"Yes": -0.25, "No": -1.6})},
        request_hash(gbody): {"status": 200, "body": chat_reply("click(5, 6)")},
    }
    monkeypatch.setenv("GK_TEST_KEY", "secret")
    with FixtureServer(fixtures) as server:
        cfg = cfg_for(server, api_key_env="GK_TEST_KEY")
        assert http_yes_score(IMG, "save", cfg) == -0.25
        client = HttpClient(cfg)
        assert HttpYesScorer(cfg, client).score(IMG, "save") == -0.25
        assert HttpGroundingBackend(cfg, client).ground(IMG, "save") == "click(5, 6)"
        assert client._headers()["Authorization"] == "Bearer secret"


def test_client_bounds_in_flight_requests():
    cfg0 = BackendConfig(endpoint_url="http://127.0.0.1:1/x", model_name="m")
    prompts = [f"p{i}" for i in range(12)]
    fixtures = {
        request_hash(build_chat_request(IMG, p, cfg0)): {"status": 200, "body": chat_reply(p), "delay": 0.05}
        for p in prompts
    }
    with FixtureServer(fixtures) as server:
        client = HttpClient(cfg_for(server, max_concurrency=3))
        results = {}

        def run(p):
            results[p] = http_ground(IMG, p, client.cfg, client)

        threads = [threading.Thread(target=run, args=(p,)) for p in prompts]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results == {p: p for p in prompts}
        assert 1 <= server.peak_in_flight <= 3


def test_fixture_dir_roundtrip(tmp_path):
    cfg0 = BackendConfig(endpoint_url="http://127.0.0.1:1/x", model_name="m")
    body = build_chat_request(IMG, "hi", cfg0)
    write_fixture(tmp_path, body, body=chat_reply("[7, 8]"))
    with FixtureServer(tmp_path) as server:
        assert parse_point(http_ground(IMG, "hi", cfg_for(server))) == Point(7, 8)
        with pytest.raises(TransportError) as err:
            http_ground(IMG, "unknown", cfg_for(server))
        assert err.value.status == 404


def test_config_validation():
    with pytest.raises(ValueError):
        BackendConfig(max_concurrency=0)
    with pytest.raises(ValueError):
        BackendConfig(grounding_prompt_template="no placeholder")
    assert BackendConfig(retry_policy={"max_retries": 5}).retry_policy.max_retries == 5
