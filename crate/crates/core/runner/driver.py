"""Built-in subject runner.

Usage: driver.py <run-spec.json> <reply.json>

Supports the materialize_only and call_function modes of the runner protocol.
File-level solutions are executed directly by the sandbox, not through here.
"""
import hashlib
import json
import math
import pickle
import random
import sys
import traceback

PROTOCOL_VERSION = 1


def dumps(value):
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def encode(x):
    if x is None or isinstance(x, bool) or isinstance(x, str):
        return x
    if isinstance(x, int):
        return x if -(2 ** 63) <= x < 2 ** 63 else {"$int": str(x)}
    if isinstance(x, float):
        return x if math.isfinite(x) else {"$float": repr(x)}
    if isinstance(x, list):
        return [encode(v) for v in x]
    if isinstance(x, tuple):
        return {"$tuple": [encode(v) for v in x]}
    if isinstance(x, (set, frozenset)):
        return {"$set": sorted((encode(v) for v in x), key=dumps)}
    if isinstance(x, dict):
        if all(isinstance(k, str) and not k.startswith("$") for k in x):
            return {k: encode(v) for k, v in x.items()}
        return {"$dict": sorted(([encode(k), encode(v)] for k, v in x.items()), key=dumps)}
    if isinstance(x, (bytes, bytearray)):
        return {"$bytes": bytes(x).hex()}
    return {"$repr": repr(x)}


def decode(v):
    if isinstance(v, list):
        return [decode(x) for x in v]
    if isinstance(v, dict):
        if len(v) == 1:
            (tag, inner), = v.items()
            if tag == "$tuple":
                return tuple(decode(x) for x in inner)
            if tag == "$set":
                return set(decode(x) for x in inner)
            if tag == "$dict":
                return {decode(k): decode(x) for k, x in inner}
            if tag == "$int":
                return int(inner)
            if tag == "$float":
                return float(inner)
            if tag == "$bytes":
                return bytes.fromhex(inner)
        return {k: decode(x) for k, x in v.items()}
    return v


def seed_all(seed):
    random.seed(seed)
    np = sys.modules.get("numpy")
    if np is not None:
        np.random.seed(seed % (2 ** 32))


def base_namespace():
    return {"random": random, "math": math, "__name__": "__payload__"}


def run_generator(source, seed):
    import io

    ns = base_namespace()
    seed_all(seed)
    exec(compile(source, "<generator>", "exec"), ns)
    fn = ns.get("generate")
    if not callable(fn):
        funcs = [v for k, v in ns.items() if callable(v) and getattr(v, "__module__", None) == "__payload__"]
        if not funcs:
            raise ValueError("generator source defines no function")
        fn = funcs[-1]
    captured = io.StringIO()
    saved = sys.stdout
    sys.stdout = captured
    try:
        seed_all(seed)
        result = fn()
    finally:
        sys.stdout = saved
    return result if result is not None else captured.getvalue()


def materialize(spec):
    level = spec["level"]
    payload = spec["payload"]
    seed = spec.get("rng_seed", 0)
    (kind, body), = payload.items()
    if kind == "args":
        args = decode(body)
    elif kind == "stdin":
        stdin = body
    elif kind == "expressions":
        args = []
        ns = base_namespace()
        seed_all(seed)
        for expr in body:
            args.append(eval(compile(expr, "<expression>", "eval"), ns))
    elif kind == "generator":
        produced = run_generator(body, seed)
        if level == "file":
            if isinstance(produced, (list, tuple)):
                produced = "\n".join(str(x) for x in produced) + "\n"
            if not isinstance(produced, str):
                raise TypeError("file-level generator must produce text, got %s" % type(produced).__name__)
            stdin = produced
        else:
            args = list(produced) if isinstance(produced, tuple) else [produced]
    else:
        raise ValueError("unknown payload kind %r" % kind)

    out = spec["output_path"]
    if level == "file":
        data = stdin.encode("utf-8")
        with open(out, "wb") as fh:
            fh.write(data)
        return {
            "input_digest": hashlib.sha256(data).hexdigest(),
            "materialized": {"kind": "stdin", "path": out},
            "input_size": data.count(b"\n"),
        }
    canonical = dumps(encode(args)).encode("utf-8")
    with open(out, "wb") as fh:
        pickle.dump(args, fh, protocol=pickle.HIGHEST_PROTOCOL)
    return {
        "input_digest": hashlib.sha256(canonical).hexdigest(),
        "materialized": {"kind": "args", "path": out},
        "input_size": len(canonical),
    }


def call_function(spec):
    with open(spec["source_path"], encoding="utf-8") as fh:
        source = fh.read()
    entry = spec["entry_point"]
    ref = spec["materialized"]
    if ref["kind"] == "args_json":
        with open(ref["path"], encoding="utf-8") as fh:
            args = decode(json.load(fh))
    else:
        with open(ref["path"], "rb") as fh:
            args = pickle.load(fh)
    ns = {"__name__": "__solution__"}
    exec(compile(source, "<solution>", "exec"), ns)
    fn = ns.get(entry)
    if not callable(fn):
        return {"status": "runtime_error", "error": "entry point `%s` is not defined" % entry}
    result = fn(*args)
    return {"return_value": dumps(encode(result))}


def main():
    spec_path, reply_path = sys.argv[1], sys.argv[2]
    with open(spec_path, encoding="utf-8") as fh:
        spec = json.load(fh)
    reply = {"version": PROTOCOL_VERSION, "status": "ok"}
    code = 0
    try:
        if spec["mode"] == "materialize_only":
            reply.update(materialize(spec))
        elif spec["mode"] == "call_function":
            reply.update(call_function(spec))
        else:
            reply = {"version": PROTOCOL_VERSION, "status": "infra_error",
                     "error": "mode %r is not supported by the built-in runner" % spec["mode"]}
        if reply["status"] != "ok":
            code = 1
    except MemoryError:
        reply = {"version": PROTOCOL_VERSION, "status": "oom", "error": "MemoryError"}
        code = 1
    except BaseException as exc:
        tb = traceback.format_exc()
        sys.stderr.write(tb)
        status = "assertion_error" if isinstance(exc, AssertionError) else "runtime_error"
        reply = {"version": PROTOCOL_VERSION, "status": status, "error": tb[-2000:]}
        code = 1
    sys.stdout.flush()
    with open(reply_path, "w", encoding="utf-8") as fh:
        json.dump(reply, fh)
    sys.exit(code)


if __name__ == "__main__":
    main()
