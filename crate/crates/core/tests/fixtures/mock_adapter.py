#!/usr/bin/env python3
"""Test double for the line-delimited model protocol.

Scores a query as the sum of lexicon weights of kept tokens. Options:
  --lexicon PATH       word<TAB>weight file
  --reverse            answer each burst of requests in reverse order
  --fail-on WORD       per-request error when WORD is kept
  --crash-after N      exit abruptly after answering N requests (first run only,
                       tracked through the --state file)
  --state PATH         marker file for --crash-after
  --class N            report class_index N in every score
  --log PATH           append every received line
"""
import argparse
import json
import os
import select
import sys

ap = argparse.ArgumentParser()
ap.add_argument("--lexicon", required=True)
ap.add_argument("--reverse", action="store_true")
ap.add_argument("--fail-on")
ap.add_argument("--crash-after", type=int)
ap.add_argument("--state")
ap.add_argument("--class", dest="cls", type=int)
ap.add_argument("--log")
args = ap.parse_args()

lex = {}
with open(args.lexicon) as f:
    for line in f:
        line = line.rstrip("\n")
        if line and not line.startswith("#"):
            w, v = line.split("\t")
            lex[w.lower()] = float(v)

crash_armed = args.crash_after is not None and not (args.state and os.path.exists(args.state))
answered = 0
pending = []


def out(obj):
    sys.stdout.write(json.dumps(obj) + "\n")


def answer(req):
    global answered
    kept = [t for t, k in zip(req["tokens"], req["keep"]) if k]
    if args.fail_on and args.fail_on in kept:
        out({"type": "error", "id": req["id"], "message": "refusing " + args.fail_on})
    else:
        msg = {"type": "score", "id": req["id"], "score": sum(lex.get(t.lower(), 0.0) for t in kept)}
        if args.cls is not None:
            msg["class_index"] = args.cls
        out(msg)
    answered += 1
    if crash_armed and answered >= args.crash_after:
        if args.state:
            open(args.state, "w").close()
        sys.stdout.flush()
        os._exit(3)


def flush_pending():
    global pending
    batch = list(reversed(pending)) if args.reverse else pending
    pending = []
    for req in batch:
        answer(req)
    sys.stdout.flush()


fd = sys.stdin.fileno()
buf = b""


def next_line():
    """Unbuffered line read so select() sees what is really pending."""
    global buf
    while b"\n" not in buf:
        chunk = os.read(fd, 65536)
        if not chunk:
            rest, buf = buf, b""
            return rest.decode() if rest else None
        buf += chunk
    line, buf = buf.split(b"\n", 1)
    return line.decode() + "\n"


while True:
    if pending and b"\n" not in buf and not select.select([fd], [], [], 0.05)[0]:
        flush_pending()
        continue
    line = next_line()
    if line is None:
        break
    if args.log:
        with open(args.log, "a") as f:
            f.write(line)
    line = line.strip()
    if not line:
        continue
    try:
        msg = json.loads(line)
    except ValueError:
        out({"type": "error", "id": None, "message": "malformed line"})
        sys.stdout.flush()
        continue
    kind = msg.get("type")
    if kind == "hello":
        out({"type": "hello", "version": 1, "model": "mock-linear"})
        sys.stdout.flush()
    elif kind == "eval":
        pending.append(msg)
        if not args.reverse:
            flush_pending()
    elif kind == "bye":
        flush_pending()
        out({"type": "bye"})
        sys.stdout.flush()
        break
