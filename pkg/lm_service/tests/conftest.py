import pytest
from fastapi.testclient import TestClient

from lm_service.app import create_app
from lm_service.testing import VOCAB, WORDS, make_tiny_backend, make_tiny_tokenizer  # noqa: F401


@pytest.fixture(scope="session")
def backend():
    return make_tiny_backend()


@pytest.fixture(scope="session")
def client(backend):
    with TestClient(create_app(backend)) as c:
        yield c


def text(t):
    return {"kind": "text", "text": t}


SEP = {"kind": "sep"}
MASK = {"kind": "mask"}


def sentiment_prompt(query="the movie was great answer :"):
    return [
        text("review 0 bad answer : false"),
        SEP,
        text("review 1 great answer : true"),
        SEP,
        text(query + " "),
        MASK,
    ]
