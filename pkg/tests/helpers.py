"""Small utilities shared by the test modules."""
import json

from hearthmesh.home import config_from_dict


def say(at, text, pos, speaker="user"):
    return {"at_ms": at, "say": {"speaker": speaker, "text": text, "position": list(pos)}}


def mutate(doc, fn):
    doc = json.loads(json.dumps(doc))
    fn(doc)
    return doc


def edited(doc, fn):
    return config_from_dict(mutate(doc, fn))


def device_doc(doc, dev_id):
    for s in doc["subsystems"]:
        for m in s["modules"]:
            for d in m["devices"]:
                if d["id"] == dev_id:
                    return d
    raise KeyError(dev_id)


def performed(trace, device):
    return [r["action"] for r in trace if r["kind"] == "perform" and r["device"] == device]
