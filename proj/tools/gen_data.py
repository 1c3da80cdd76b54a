#!/usr/bin/env python3
"""Regenerates the demo corpora and the unit-test fixtures.

usage: python3 tools/gen_data.py            (writes data/demo and tests/data)

Output is a pure function of the fixed seeds below.
"""
import json
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
DEMO = ROOT / "data" / "demo"
TESTS = ROOT / "tests" / "data"

HUMAN_OPEN = [
    "hi",
    "hey my order never showed up",
    "need help with a return",
    "i want to cancel something",
    "ugh this is the second time im asking",
    "hello? is anyone there",
    "wrong item came",
    "can i change my address",
]
HUMAN_FOLLOW = [
    "its {id}",
    "{id} i think",
    "not sure, maybe {id}?",
    "what do you mean",
    "no thats not what i said",
    "i already gave you the number",
    "ok",
    "k thx",
    "this is ridiculous",
    "why is it taking so long",
    "never mind, can you just refund it instead",
    "fine",
    "how long will that take?",
    "wait what",
    "email is {email}",
    "i guess that works",
]
HUMAN_CLOSE = ["ok bye", "thanks", "whatever", "fine thx", "ok"]

SIM_OPEN = [
    "Hello, I hope you are doing well. I would like to request a refund for order {id}, which I placed on {date}. "
    "My email address is {email}. Thank you so much for your help.",
    "Hi there! I am writing regarding my recent order {id}. Unfortunately, the item arrived damaged, "
    "and I would greatly appreciate it if you could assist me with a replacement.",
    "Good afternoon. I would like to change the shipping address for order {id}. "
    "The account email is {email}. Thank you in advance for your assistance.",
]
SIM_FOLLOW = [
    "Thank you for checking. Please let me know if you need any additional information from me.",
    "That sounds perfect. I really appreciate your help with this matter.",
    "Certainly. The order number is {id} and the email is {email}. Thank you.",
    "I understand completely. Could you please confirm when the refund will be processed?",
    "Thank you very much for your patience and assistance today.",
]
SIM_CLOSE = ["Thank you so much for your help. Have a wonderful day!", "That is all I needed. Thank you very much!"]

AGENT = [
    "I can help with that. Could you share the order number?",
    "Thanks. Let me look into it.",
    "I see the order. Would you like a refund or a replacement?",
    "Done. Is there anything else?",
]


def order_id(rng):
    return f"W{rng.randint(10000, 99999)}"


def fill(text, rng):
    return text.format(
        id=order_id(rng),
        email=f"user{rng.randint(1, 999)}@example.com",
        date=f"2024-0{rng.randint(1, 9)}-1{rng.randint(0, 9)}",
    )


def episode(rng, ep_id, task_id, source, domain, model=None):
    turns = []
    if source == "human":
        n = rng.randint(2, 7)
        user = [fill(rng.choice(HUMAN_OPEN), rng)]
        user += [fill(rng.choice(HUMAN_FOLLOW), rng) for _ in range(n - 2)]
        user.append(rng.choice(HUMAN_CLOSE))
    else:
        n = rng.randint(2, 4)
        user = [fill(rng.choice(SIM_OPEN), rng)]
        user += [fill(rng.choice(SIM_FOLLOW), rng) for _ in range(n - 2)]
        user.append(rng.choice(SIM_CLOSE))
    for k, text in enumerate(user):
        turns.append({"role": "user", "text": text})
        if k + 1 < len(user):
            if rng.random() < 0.3:
                turns.append({"role": "agent", "text": "TOOL: lookup order"})
                turns.append({"role": "tool", "text": "order found"})
            turns.append({"role": "agent", "text": rng.choice(AGENT)})
    meta = {"domain": domain}
    if model:
        meta["model"] = model
    return {"episode_id": ep_id, "task_id": task_id, "source": source, "turns": turns, "metadata": meta}


def write_jsonl(path, records):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def write_json(path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def corpus(seed, prefix, source, count, domain="retail", model=None):
    rng = random.Random(seed)
    return [episode(rng, f"{prefix}-{i:03d}", f"task_{i % 12:02d}", source, domain, model) for i in range(count)]


def env_script(script_id):
    return {
        "format": "ppol-env-script",
        "version": 1,
        "id": script_id,
        "initial": "start",
        "states": {
            "start": {
                "transitions": [{"match": "lookup", "response": "order found: 1 item, status delivered", "next": "found"}],
                "default": "no action taken",
            },
            "found": {
                "transitions": [{"match": "resolve", "response": "request resolved", "next": "done"}],
                "default": "order still open",
            },
            "done": {"terminal": True, "default": "nothing left to do"},
        },
    }


GOALS = [
    "return the headphones from order {id} because they stopped working",
    "cancel order {id} before it ships",
    "change the delivery address on order {id} to your office",
    "exchange the shoes from order {id} for a larger size",
    "find out why order {id} is late",
    "get a refund for a duplicate charge on order {id}",
    "update the payment method for order {id}",
    "report that order {id} arrived damaged",
    "ask whether order {id} can be gift wrapped",
    "return two of the three items in order {id}",
    "check the warranty on the blender from order {id}",
    "dispute a restocking fee on order {id}",
]


def demo():
    rng = random.Random(2024)
    tasks = []
    for i, goal in enumerate(GOALS):
        oid = order_id(rng)
        tasks.append({
            "task_id": f"task_{i:02d}",
            "domain": "retail",
            "user_context": "You are a customer contacting an online store's support chat. "
            f"Your goal: {goal.format(id=oid)}. Your order number is {oid}. "
            "Only reveal details when they are relevant.",
            "agent_prompt": "You are a retail customer-service agent. Use tools by writing 'TOOL: <action>' "
            "on its own line. Be helpful and concise.",
            "env_script": "retail_basic",
            "success_criteria": "request handled",
        })
    write_json(DEMO / "tasks.json", {"format": "ppol-tasks", "version": 1, "tasks": tasks})
    write_json(DEMO / "envs" / "retail_basic.json", env_script("retail_basic"))
    write_jsonl(DEMO / "human_train.jsonl", corpus(11, "h-train", "human", 60))
    write_jsonl(DEMO / "human_calibration.jsonl", corpus(12, "h-cal", "human", 30))
    write_jsonl(DEMO / "human_test.jsonl", corpus(13, "h-test", "human", 20))
    write_jsonl(DEMO / "base_sim.jsonl", corpus(21, "sim-train", "base_sim", 60, model="demo-sim"))
    write_jsonl(DEMO / "sim_test.jsonl", corpus(22, "sim-test", "base_sim", 20, model="demo-sim"))
    write_json(DEMO / "config.json", {
        "format": "ppol-config",
        "version": 1,
        "data": {
            "tasks": "tasks.json",
            "human_train": "human_train.jsonl",
            "human_calibration": "human_calibration.jsonl",
            "lexicon": "../lexicons/default.json",
            "discriminator": "model.json",
            "env_dir": "envs",
        },
        "forest": {"n_estimators": 200, "max_depth": 12, "seed": 42},
        "gateway": {
            "endpoint": "https://api.openai.com/v1",
            "api_key_env": "PPOL_API_KEY",
            "models": {"generator": "gpt-4.1", "user": "gpt-4.1", "agent": "gpt-4.1",
                       "reflection": "gpt-4.1", "mutation": "gpt-4.1"},
            "max_workers": 8,
        },
        "rollout": {"max_turns": 30},
        "evolve": {
            "iterations": 5,
            "islands": 5,
            "curriculum": [5, 8, 10],
            "minibatch_size": 5,
            "validation_task_ids": ["task_10", "task_11"],
            "seed": 42,
        },
        "mock": {"seed": 7},
        "output": "run",
    })


# --- test fixtures ---------------------------------------------------------

LITERAL_FAMILIES = {
    "politeness": ["please", "thank you", "thanks"],
    "formality": ["regarding", "furthermore", "sincerely"],
    "acknowledgment": ["ok", "got it", "sure"],
    "identity_confusion": ["how can i help", "let me check"],
    "uncertainty": ["maybe", "not sure", "i think"],
    "certainty": ["definitely", "absolutely"],
    "pushback": ["that is wrong", "i already said"],
    "clarification": ["what do you mean", "can you clarify"],
    "info_seeking": ["when will", "where is", "how long"],
    "emotional": ["annoyed", "upset", "ugh"],
    "accusatory": ["useless", "unacceptable"],
    "pivot": ["instead", "never mind"],
    "identifiers": ["w1001", "w1002", "w2002", "ab123"],
}

PHRASES = [w for fam in LITERAL_FAMILIES.values() for w in fam]
FILLER = ["the", "order", "is", "late", "and", "i", "need", "it", "today", "box", "refund", "my", "card",
          "was", "charged", "twice", "hello", "hi", "yes", "no", "okay", "sureness", "thanksgiving"]


def fixture_turn(rng):
    words = []
    for _ in range(rng.randint(0, 9)):
        words.append(rng.choice(PHRASES) if rng.random() < 0.3 else rng.choice(FILLER))
    text = " ".join(words)
    if rng.random() < 0.3:
        text = text.upper() if rng.random() < 0.5 else text.capitalize()
    if rng.random() < 0.3:
        text += rng.choice(["!", "?", ".", "..."])
    return text if text.strip() else "ok"


def fixtures():
    rng = random.Random(99)
    episodes = []
    for i in range(20):
        turns = []
        n = rng.randint(1, 6)
        base = [fixture_turn(rng) for _ in range(n)]
        for k, text in enumerate(base):
            if k > 0 and rng.random() < 0.25:
                text = base[rng.randrange(k)]  # repeat an earlier turn
            if rng.random() < 0.2:
                turns.append({"role": "agent", "text": "let me check that for you"})
            turns.append({"role": "user", "text": text})
            turns.append({"role": "agent", "text": "noted"})
        episodes.append({"episode_id": f"fx-{i:02d}", "task_id": f"t{i % 4}", "source": "human",
                         "turns": turns, "metadata": {"domain": "retail"}})
    write_jsonl(TESTS / "fixture_corpus.jsonl", episodes)
    write_json(TESTS / "lexicon_literal.json", {
        "format": "ppol-lexicon",
        "version": 1,
        "families": {k: ["\\b" + p + "\\b" for p in v] for k, v in LITERAL_FAMILIES.items()},
    })
    # three-episode corpus for command-line tests, one line malformed, one agent-only
    rng = random.Random(5)
    small = [episode(rng, f"small-{i}", "task_00", "human", "retail") for i in range(3)]
    lines = [json.dumps(r, sort_keys=True) for r in small]
    lines.append("{not json")
    lines.append(json.dumps({"episode_id": "agent-only", "task_id": "task_00", "source": "base_sim",
                             "turns": [{"role": "agent", "text": "hello?"}], "metadata": {"domain": "retail"}}))
    (TESTS / "three_episodes.jsonl").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    demo()
    fixtures()
