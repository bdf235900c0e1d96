#!/usr/bin/env python3
"""Regenerates the synthetic sample corpus, indicator tables and annotations
under data/sample/. Output is a pure function of the seed."""

import csv
import json
import math
import random
from pathlib import Path

SEED = 42
COUNTRIES = {"XA": ("XAA", 0.35, 0.030), "XB": ("XBB", 0.62, -0.020)}
YEARS = range(2010, 2020)
OUT = Path(__file__).resolve().parent.parent / "data" / "sample"

EVIDENCE_VERBS = ["argue", "examine", "analyze", "research", "assess", "demonstrate", "explain", "justify"]
EVIDENCE_NOUNS = ["evidence", "data", "research", "investigation", "analysis", "inquiry"]
INTUITION = ["feeling", "belief", "doubt", "opinion", "instinct", "conviction", "intuition", "distrust", "hunch"]

EVIDENCE_SENTENCES = [
    ("We {w} the figures that the ministry has published this year", EVIDENCE_VERBS),
    ("The committee will {w} how the new rules have worked in the regions", EVIDENCE_VERBS),
    ("I would like to {w} what the reports from the last two years show", EVIDENCE_VERBS),
    ("Our group has looked at the {w} and it is clear what we should do", EVIDENCE_NOUNS),
    ("The {w} from the audit office tells us where the money has gone", EVIDENCE_NOUNS),
    ("Let me {w} why the cost of the plan is higher than it was", EVIDENCE_VERBS),
]
INTUITION_SENTENCES = [
    "It is my {w} that the people do not want this at all",
    "There is a strong {w} out there that the government has lost its way",
    "I have a {w} about this plan and so do many of my friends",
    "The {w} in the country is that nothing will change for them",
    "This is all a matter of {w} and everyone can see it",
    "My {w} tells me that we should not go down this road",
]
NEUTRAL_SENTENCES = [
    "We have to think about the families who live in our towns",
    "This is a matter for all of us in this house",
    "The people in the north have been waiting for a long time",
    "I want to thank my colleagues for their work on this",
    "It is not the first time we have talked about this",
    "There are many who will be affected by what we decide here",
    "We all know that the situation is not easy for anyone",
    "Let us not forget the young people and what they need",
    "The budget for schools and roads is part of this plan",
    "Our country can do better and we should say so",
]
PROCEDURAL = ("The session is open and the agenda has one item. The chair calls the vote on the motion. "
              "The amendment is adopted and the minutes are approved. The session is adjourned.")
SURNAMES = ("Aldana Borgstrom Castellano Dvorakova Ekwueme Fitzwilliam Gunnarsdottir Hakobyan Ibarguen "
            "Jablonska Kowalczyk Lindqvist Moravcik Nakashima Oyelaran Petrovski")
SHORT = "Thank you very much for that."


def sentence(rng, p_ev):
    u = rng.random()
    if u < 0.45:
        return rng.choice(NEUTRAL_SENTENCES), 0, 0
    if rng.random() < p_ev:
        template, words = rng.choice(EVIDENCE_SENTENCES)
        return template.format(w=rng.choice(words)), 1, 0
    return rng.choice(INTUITION_SENTENCES).format(w=rng.choice(INTUITION)), 0, 1


def speech_text(rng, p_ev, target_tokens):
    parts, ev, it, n = [], 0, 0, 0
    while n < target_tokens:
        s, e, i = sentence(rng, p_ev)
        parts.append(s + ".")
        ev, it, n = ev + e, it + i, n + len(s.split())
    return " ".join(parts), ev, it, n


def main():
    rng = random.Random(SEED)
    OUT.mkdir(parents=True, exist_ok=True)
    records, indicators, gdp, annotations = [], [], [], []
    serial = 0

    def emit(rec):
        nonlocal serial
        serial += 1
        rec = {"id": f"s{serial:05d}", **rec}
        records.append(rec)
        return rec

    for code, (vdem, base, drift) in COUNTRIES.items():
        country_effect = 0.08 if code == "XA" else -0.05
        gdp_level = 9.8 if code == "XA" else 10.3
        for k, year in enumerate(YEARS):
            p_ev = min(0.9, max(0.1, base + drift * k + rng.gauss(0, 0.06)))
            day = 1
            def date():
                nonlocal day
                day += 9
                return f"{year}-{1 + day // 28:02d}-{1 + day % 28:02d}"

            emit({"country": code, "chamber": "lower", "date": date(), "speaker": "Presiding Officer",
                  "role": "President", "lang": "en", "text": "The sitting is resumed. " + speech_text(rng, p_ev, 30)[0]})
            members = []
            for j in range(8):
                r = rng.random()
                target = rng.randint(60, 140) if r < 0.4 else rng.randint(160, 320) if r < 0.85 else rng.randint(330, 480)
                text, ev, it, n = speech_text(rng, p_ev, target)
                rec = emit({"country": code, "chamber": "lower" if j % 3 else "upper", "date": date(),
                            "speaker": f"Member {code}-{rng.randint(1, 40)}", "role": "Member", "lang": "en", "text": text})
                members.append((rec, ev, it, n))
            if k % 3 == 0:
                dup = members[0][0]
                emit({**{x: dup[x] for x in ("country", "chamber", "speaker", "role", "lang")},
                      "date": date(), "text": dup["text"].replace(". ", ".  ")})
            if k % 4 == 1:
                emit({"country": code, "chamber": "lower", "date": date(), "speaker": f"Member {code}-7",
                      "role": "Member", "lang": "en", "text": SHORT})
            if k % 4 == 2:
                emit({"country": code, "chamber": "upper", "date": date(), "speaker": f"Member {code}-9",
                      "role": "Member", "lang": "en", "text": SURNAMES})
            if k % 2 == 0:
                emit({"country": code, "chamber": "lower", "date": date(), "speaker": f"Member {code}-3",
                      "role": "Member", "lang": "en", "text": PROCEDURAL})

            for rec, ev, it, n in members:
                if n <= 150 and rng.random() < 0.8:
                    human_ev = min(5, 1 + ev + (rng.random() < 0.3))
                    human_it = min(5, 1 + it + (rng.random() < 0.3))
                    annotations.append({"id": f"{rec['id']}#0", "evidence": human_ev, "intuition": human_it})

            judicial = min(0.98, max(0.2, 0.7 + country_effect + rng.gauss(0, 0.04)))
            client_raw = min(0.9, max(0.05, 0.3 - country_effect - 0.1 * (p_ev - 0.5) + rng.gauss(0, 0.03)))
            ddi = min(0.95, max(0.05, 0.55 + country_effect + 0.35 * (p_ev - 0.5) + rng.gauss(0, 0.015)))
            tpl = 0.4 + 1.2 * (p_ev - 0.5) + 0.8 * judicial - 0.5 * client_raw + rng.gauss(0, 0.05)
            gdp_pc = math.exp(gdp_level + 0.02 * k + rng.gauss(0, 0.01))
            indicators.append({"country_text_id": vdem, "year": year, "v2x_delibdem": round(ddi, 4),
                               "v2cltrnslw": round(tpl, 4), "v2xnp_client": round(client_raw, 4),
                               "v2x_jucon": round(judicial, 4)})
            gdp.append({"countrycode": vdem, "year": year, "gdppc": round(gdp_pc, 2)})
        indicators.append({"country_text_id": vdem, "year": 2009, "v2x_delibdem": 0.5, "v2cltrnslw": 0.5,
                           "v2xnp_client": 0.3, "v2x_jucon": 0.7})

    malformed = [
        '{"id": "s99998", "country": "XA", "chamber": "lower", "date": "2015-06-01", "speaker": "Member XA-1", "role": "Member", "lang": "en", "text": ""}',
        '{"id": "s99999", "country": "XB", "chamber": "lower", "date": "2016-02-30", "speaker": "Member XB-2", "role": "Member", "lang": "en", "text": "A date that does not exist."}',
    ]
    with open(OUT / "corpus.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for i, rec in enumerate(records):
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
            if i in (40, 120):
                f.write(malformed[i // 100] + "\n")

    def write_csv(name, rows):
        with open(OUT / name, "w", encoding="utf-8", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0].keys()), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)

    write_csv("indicators.csv", indicators)
    write_csv("gdp.csv", gdp)
    write_csv("annotations.csv", annotations)
    print(f"{len(records)} speeches, {len(annotations)} annotations")


if __name__ == "__main__":
    main()
