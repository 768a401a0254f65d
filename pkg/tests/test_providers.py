import json

import httpx
import pytest

from oipharness.instrument import Category, Language, Mode, parse_likert, render_prompt
from oipharness.providers import (
    REFUSAL_TEXT,
    AdministrationRecord,
    AuthError,
    EndpointConfig,
    FatalProviderError,
    HttpChatClient,
    LatentProfile,
    MockClient,
    ProviderParams,
    administer_item,
    complete,
    mock_respond,
)


def flat(mean, **kw):
    return LatentProfile.from_letters({c: mean for c in "RIASEC"}, **kw)


class Scripted:
    """Client replaying a fixed list of replies."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, prompt, params, *, replication=1, attempt=1):
        self.calls += 1
        return self.replies.pop(0)

    def now(self):
        return None


def test_params_validation():
    with pytest.raises(ValueError):
        ProviderParams("m", temperature=float("nan"))
    with pytest.raises(ValueError):
        ProviderParams("m", max_attempts=0)
    with pytest.raises(ValueError):
        ProviderParams("")
    assert ProviderParams("gpt", "0613").key == "gpt@0613"


def test_profile_validation():
    with pytest.raises(ValueError):
        flat(5.5)
    with pytest.raises(ValueError):
        flat(3.0, refusal=1.0)
    with pytest.raises(ValueError):
        LatentProfile.from_letters({"R": 3})


def test_mock_noise_zero_rules(bank):
    social = bank.in_category(Category.parse("S"))[0]
    assert mock_respond(flat(5.0), social, Mode.INTEREST) == "Strongly Like"
    assert mock_respond(flat(3.2), social, Mode.INTEREST) == "Unsure"
    assert mock_respond(flat(3.5), social, Mode.INTEREST) == "Like"  # half rounds up
    assert mock_respond(flat(4.0), social, Mode.COMPETENCE) == "4"
    assert mock_respond(flat(2.0), social, Mode.INTEREST, language="zh") == "不喜欢"


def test_mock_artistic_high(bank):
    prof = LatentProfile.from_letters({"R": 2, "I": 2, "A": 4.6, "S": 2, "E": 2, "C": 2}, noise=0.5)
    art = bank.in_category(Category.parse("A"))
    values = [parse_likert(mock_respond(prof, it, seed=3, replication=r)).numeric for it in art for r in range(1, 6)]
    assert sum(values) / len(values) > 4.2


def test_mock_deterministic_and_seed_sensitive(bank):
    prof = flat(3.0, noise=1.0)
    it = bank.by_id(7)
    a = [mock_respond(prof, it, seed=5, replication=r) for r in range(1, 30)]
    b = [mock_respond(prof, it, seed=5, replication=r) for r in range(1, 30)]
    c = [mock_respond(prof, it, seed=6, replication=r) for r in range(1, 30)]
    assert a == b
    assert a != c


def test_mock_refusal_always(bank):
    assert mock_respond(flat(3.0, refusal=0.999999), bank.by_id(1), seed=1) == REFUSAL_TEXT[Language.ENGLISH]


def test_mock_item_offset_shared_across_providers(bank):
    prof = flat(3.0, item_sd=1.5)
    for it in list(bank)[:10]:
        assert (mock_respond(prof, it, seed=2, model_id="a") == mock_respond(prof, it, seed=2, model_id="b"))


def test_administer_happy_path(bank):
    rec = administer_item(Scripted(["Like"]), bank.by_id(1), "interest", "en", ProviderParams("m"), 1)
    assert rec.final_value == 4
    assert len(rec.attempts) == 1


def test_administer_retries_after_refusal(bank):
    rec = administer_item(Scripted([REFUSAL_TEXT[Language.ENGLISH], "Dislike"]), bank.by_id(1), "interest",
                          "en", ProviderParams("m"), 3)
    assert rec.final_value == 2
    assert [a.value for a in rec.attempts] == [None, 2]
    assert rec.attempts[0].raw_text.startswith("As an AI")
    assert rec.replication_index == 3


def test_administer_exhaustion_is_missing(bank):
    client = Scripted(["no idea"] * 4)
    rec = administer_item(client, bank.by_id(1), "interest", "en", ProviderParams("m", max_attempts=4), 1)
    assert rec.final_value is None and rec.missing
    assert len(rec.attempts) == 4
    assert client.calls == 4


def test_record_json_round_trip(bank):
    rec = administer_item(Scripted(["??", "5"]), bank.by_id(9), "competence", "zh", ProviderParams("m", "v2"), 2)
    back = AdministrationRecord.from_json(json.loads(json.dumps(rec.to_json())))
    assert back == rec
    assert back.key == ("m@v2", "zh", "competence", 9, 2)


def test_mock_client_profiles_by_language(bank):
    en, zh = flat(2.0), flat(5.0)
    client = MockClient({("interest", "en"): en, ("interest", "zh"): zh}, bank)
    p = ProviderParams("m")
    assert complete(client, render_prompt(bank.by_id(1), "interest", "en"), p) == "Dislike"
    assert complete(client, render_prompt(bank.by_id(1), "interest", "zh"), p) == "非常喜欢"
    with pytest.raises(KeyError):
        client.profile_for("competence", "en")


# --- networked client over a fake transport -------------------------------------------------


def _client(handler, env=None, **kw):
    endpoint = EndpointConfig(url="https://api.example.test/v1/chat", api_key_env="TEST_KEY", **kw)
    return HttpChatClient(endpoint, transport=httpx.MockTransport(handler),
                          environ={"TEST_KEY": "sk-test"} if env is None else env)


def test_http_request_shape(bank):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "Strongly Like"}}]})

    client = _client(handler)
    prompt = render_prompt(bank.by_id(1), "interest", "en")
    text = complete(client, prompt, ProviderParams("gpt-x", temperature=0.9))
    assert text == "Strongly Like"
    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"]["temperature"] == 0.9
    assert seen["body"]["model"] == "gpt-x"
    assert seen["body"]["messages"][0]["content"] == prompt.text


def test_http_auth_error_is_fatal(bank):
    client = _client(lambda r: httpx.Response(401))
    with pytest.raises(AuthError):
        administer_item(client, bank.by_id(1), "interest", "en", ProviderParams("m"), 1, sleep=lambda s: None)


def test_http_missing_env_var(bank):
    client = _client(lambda r: httpx.Response(200, json={}), env={})
    with pytest.raises(AuthError, match="TEST_KEY"):
        complete(client, render_prompt(bank.by_id(1), "interest", "en"), ProviderParams("m"))


def test_http_rate_limit_backoff_then_success(bank):
    replies = [httpx.Response(429, headers={"retry-after": "2"}), httpx.Response(503),
               httpx.Response(200, json={"choices": [{"message": {"content": "4"}}]})]
    waits = []
    client = _client(lambda r: replies.pop(0))
    rec = administer_item(client, bank.by_id(1), "interest", "en", ProviderParams("m"), 1,
                          sleep=waits.append, backoff=0.5)
    assert rec.final_value == 4
    assert waits == [2.0, 1.0]


def test_http_transport_exhaustion(bank):
    client = _client(lambda r: httpx.Response(500))
    with pytest.raises(FatalProviderError):
        administer_item(client, bank.by_id(1), "interest", "en", ProviderParams("m"), 1,
                        transport_retries=2, sleep=lambda s: None)
    assert client.calls == 3


def test_http_bad_response_shape(bank):
    client = _client(lambda r: httpx.Response(200, json={"unexpected": True}))
    with pytest.raises(FatalProviderError):
        administer_item(client, bank.by_id(1), "interest", "en", ProviderParams("m"), 1,
                        transport_retries=0, sleep=lambda s: None)
