import numpy as np
import pytest

from conftest import MASK, SEP, sentiment_prompt, text


def _two_prompt_batch():
    return [
        {
            "segments": sentiment_prompt("the movie was bad answer :"),
            "gold": "false",
            "candidates": ["true", "false"],
        },
        {
            "segments": sentiment_prompt("the movie was great answer :"),
            "gold": "true",
            "candidates": ["true", "false"],
        },
    ]


def _loss_at(client, batch, sep):
    response = client.post("/grad_sep", json={"batch": batch, "sep_embedding": sep})
    assert response.status_code == 200, response.text
    return response.json()


def test_grad_matches_finite_differences(client):
    rng = np.random.default_rng(3)
    sep = rng.normal(scale=0.3, size=32)
    batch = _two_prompt_batch()
    payload = _loss_at(client, batch, sep.tolist())
    assert payload["dim"] == 32
    grad = np.asarray(payload["grad"])

    h = 1e-4
    fd = np.zeros(32)
    for i in range(32):
        up, down = sep.copy(), sep.copy()
        up[i] += h
        down[i] -= h
        fd[i] = (
            _loss_at(client, batch, up.tolist())["loss"]
            - _loss_at(client, batch, down.tolist())["loss"]
        ) / (2 * h)
    rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
    assert rel < 1e-3, f"relative error {rel:.2e}"


def test_grad_over_full_vocab_matches_finite_differences(client):
    rng = np.random.default_rng(4)
    sep = rng.normal(scale=0.3, size=32)
    batch = [
        {
            "segments": [text("gingerbread is a subclass of "), MASK],
            "gold": "cookie",
            "candidates": "vocab",
        }
    ]
    grad = np.asarray(_loss_at(client, batch, sep.tolist())["grad"])
    # no separator slots in this prompt: the loss cannot depend on the vector
    assert np.allclose(grad, 0.0)

    batch[0]["segments"] = [
        text("berlin is located in berlin"),
        SEP,
        text("gingerbread is a subclass of "),
        MASK,
    ]
    payload = _loss_at(client, batch, sep.tolist())
    grad = np.asarray(payload["grad"])
    h = 1e-4
    fd = np.zeros(32)
    for i in range(32):
        up, down = sep.copy(), sep.copy()
        up[i] += h
        down[i] -= h
        fd[i] = (
            _loss_at(client, batch, up.tolist())["loss"]
            - _loss_at(client, batch, down.tolist())["loss"]
        ) / (2 * h)
    rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
    assert rel < 1e-3, f"relative error {rel:.2e}"


def test_grad_loss_is_mean_cross_entropy_of_score(client):
    """With one item, exp(-loss) must equal the /score probability of gold."""
    sep = [0.1] * 32
    batch = [_two_prompt_batch()[1]]
    loss = _loss_at(client, batch, sep)["loss"]
    score = client.post(
        "/score",
        json={
            "segments": batch[0]["segments"],
            "candidates": batch[0]["candidates"],
            "sep_embedding": sep,
        },
    ).json()
    p_gold = score["probs"][score["candidates"].index("true")]
    assert np.exp(-loss) == pytest.approx(p_gold, rel=1e-9)


def test_grad_empty_batch_is_400(client):
    response = client.post("/grad_sep", json={"batch": [], "sep_embedding": [0.0] * 32})
    assert response.status_code == 400


def test_grad_dimension_mismatch_is_400(client):
    response = client.post(
        "/grad_sep", json={"batch": _two_prompt_batch(), "sep_embedding": [0.0] * 5}
    )
    assert response.status_code == 400


def test_grad_gold_not_in_candidates_is_422(client):
    batch = _two_prompt_batch()
    batch[0]["gold"] = "berlin"
    response = client.post(
        "/grad_sep", json={"batch": batch, "sep_embedding": [0.0] * 32}
    )
    assert response.status_code == 422


def test_grad_multi_token_gold_is_422(client):
    batch = _two_prompt_batch()
    batch[0]["gold"] = "gingerbread cookie"
    batch[0]["candidates"] = ["gingerbread cookie", "false"]
    response = client.post(
        "/grad_sep", json={"batch": batch, "sep_embedding": [0.0] * 32}
    )
    assert response.status_code == 422
