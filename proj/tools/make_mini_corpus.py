#!/usr/bin/env python3
"""Regenerates the bundled mini-corpus under data/mini/.

Writes comments.jsonl, labels.tsv, ratings.tsv and a toy 32-dimensional
word-vector file whose geometry puts every category's keywords on their own
axis. Output is deterministic.
"""

import json
import pathlib
import random
import re

ROOT = pathlib.Path(__file__).resolve().parent.parent
OUT = ROOT / "data" / "mini"

KEYWORDS = {
    "overpopulation": "overpopulation population populated kids children family births shift crowded demand",
    "urbanization": "urbanization urban expansion areas land lands conversion concrete cities city buildings",
    "pollution": "pollution contamination contaminated polluted sewage dirty toxic bacteria cyanobacteria "
                 "eutrophication draining wastewater dumping chemicals defecation garbage",
    "climate_change": "climate change global warming weather heat temperature rain hot",
    "agriculture": "agricultural agriculture irrigation irrigated crops farming farmers rice sugarcane",
    "water_withdrawals": "withdrawals pumping pumps borewell borewells removal cycle permanent withdraw tankers",
    "government_inaction": "government govt inaction policy makers indifference funding funds cuts politicians",
    "deforestation": "deforestation trees tree forest forests cut cutting nutrient soil green",
    "natural_calamities": "drought flood floods droughts topographical disadvantage calamity famine",
    "damming": "damming dams dam impoundment impoundments reservoir",
    "public_water_wastage": "wastage wasting public usage taps leaking washing cars",
    "industrial_development": "industrial industries industry petroleum oil sands development factories factory",
    "corruption": "corruption corrupt mismanagement bribe scam mafia",
    "lack_of_infrastructure": "infrastructure distribution system pipes pipelines supply",
    "religion": "religion hindu caste islam muslim temple religious",
    "lack_of_awareness": "awareness aware study educate education ignorant uneducated",
    "lack_of_harvesting": "rainwater harvesting preservation preserve conserve conservation catchment",
    "loss_of_water_bodies": "bodies lakes lake ponds tables wetlands encroached",
    "human_activity": "human activity protein diet livestock consumption meat beef cattle",
    "groundwater_exploitation": "groundwater exploitation strain resources depletion ground exploiting aquifer",
}
WATER = "water crisis save drink drinking river rivers need shortage scarcity chennai india thirsty"
OFFTOPIC = "pakistan kashmir china cricket war modi army song video subscribe nice match bro movie"

# (sentence, categories); categories None leaves the sentence unannotated.
COMMENTS = [
    [("too many kids in every family", ["overpopulation"]), ("india needs fewer children", ["overpopulation"])],
    [("stop have 9 kids family", ["overpopulation"])],
    [("population is the root of the water crisis", ["overpopulation"]), ("nice video bro", [])],
    [("crowded cities and more births mean more demand", ["overpopulation"])],
    [("urban expansion ate all the land", ["urbanization"]), ("concrete everywhere in the city", ["urbanization"])],
    [("conversion of lands into buildings is killing us", ["urbanization"])],
    [("sewage is dumped in the river", ["pollution"]), ("the water is toxic", ["pollution"])],
    [("factories dumping chemicals made rivers polluted", ["pollution", "industrial_development"])],
    [("open defecation contaminated the lake", ["pollution"]), ("so sad", None)],
    [("global warming is changing the weather", ["climate_change"])],
    [("extreme heat and lack of rain", ["climate_change"]), ("it is too hot now", ["climate_change"])],
    [("climate change is real", ["climate_change"]), ("watch this video", [])],
    [("sugarcane and rice crops need too much irrigation", ["agriculture"])],
    [("farmers waste water on farming", ["agriculture"])],
    [("why is india not following the natural farming method", ["agriculture"])],
    [("borewell pumping everywhere", ["water_withdrawals"]), ("tankers withdraw water all day", ["water_withdrawals"])],
    [("permanent removal of water from the cycle by pumps", ["water_withdrawals"])],
    [("govt is doing nothing", ["government_inaction"]), ("policy makers are indifferent", ["government_inaction"])],
    [("the government cuts funding for water", ["government_inaction"])],
    [("politicians do not care about the water crisis", ["government_inaction"])],
    [("we cut trees to build flat malls multi stored buildings", ["deforestation"])],
    [("forests are being cut for roads", ["deforestation"]), ("no trees no rain", ["deforestation"])],
    [("deforestation destroys the soil", ["deforestation"])],
    [("drought every summer", ["natural_calamities"]), ("floods in the monsoon", ["natural_calamities"])],
    [("famine and droughts hit the villages", ["natural_calamities"])],
    [("dams stop the river flow", ["damming"]), ("big dam projects", ["damming"])],
    [("the reservoir impoundment dried the river downstream", ["damming"])],
    [("people keep wasting water washing cars", ["public_water_wastage"])],
    [("leaking taps everywhere", ["public_water_wastage"]), ("public usage is excessive", ["public_water_wastage"])],
    [("oil industry uses too much water", ["industrial_development"])],
    [("industrial development needs huge water", ["industrial_development"]), ("factories everywhere", None)],
    [("corruption in water boards", ["corruption"]), ("the tanker mafia runs a scam", ["corruption"])],
    [("corrupt officials and mismanagement", ["corruption"])],
    [("pipes are broken", ["lack_of_infrastructure"]), ("no distribution system for supply", ["lack_of_infrastructure"])],
    [("old pipelines leak the supply", ["lack_of_infrastructure"])],
    [("religion has nothing to do with it", ["religion"]), ("hindu caste system is the problem", ["religion"])],
    [("they blame muslim people for everything", ["religion"])],
    [("people are not aware", ["lack_of_awareness"]), ("we need education about water", ["lack_of_awareness"])],
    [("uneducated people waste everything", ["lack_of_awareness"])],
    [("no rainwater harvesting in homes", ["lack_of_harvesting"]), ("preserve every drop", ["lack_of_harvesting"])],
    [("plz make vdo in rainwater harvesting", ["lack_of_harvesting"])],
    [("lakes are encroached", ["loss_of_water_bodies"]), ("ponds have disappeared", ["loss_of_water_bodies"])],
    [("wetlands and lakes were filled for plots", ["loss_of_water_bodies"])],
    [("meat diet needs a lot of water", ["human_activity"]), ("cattle consumption is huge", ["human_activity"])],
    [("human activity is the cause", ["human_activity"])],
    [("groundwater is being exploited", ["groundwater_exploitation"]),
     ("aquifer depletion is a strain on resources", ["groundwater_exploitation"])],
    [("ground water exploitation must stop", ["groundwater_exploitation"])],
    [("pakistan and china at war", []), ("kashmir again", [])],
    [("cricket match today", []), ("modi army song", [])],
    [("save water", []), ("drink more water", [])],
    [("chennai needs water", []), ("nice video", [])],
    [("subscribe to my channel", []), ("bro what a movie", [])],
]


def vector(rng, axis, dim=32):
    v = [0.0] * dim
    if axis is not None:
        v[axis] = 1.0
        for k in range(22, dim):
            v[k] = 0.25 * rng.gauss(0.0, 1.0)
    else:
        for k in range(dim):
            v[k] = 0.3 * rng.gauss(0.0, 1.0)
    return v


def tokenize(text):
    return [t for t in re.split(r"[^0-9a-z\x80-￿]+", text.lower()) if t]


def main():
    rng = random.Random(20240601)
    OUT.mkdir(parents=True, exist_ok=True)
    axis = {}
    for i, (cat, words) in enumerate(KEYWORDS.items()):
        for w in words.split():
            axis.setdefault(w, i)
    for w in WATER.split():
        axis.setdefault(w, 20)
    for w in OFFTOPIC.split():
        axis.setdefault(w, 21)

    vocab = set(axis)
    records, labels = [], ["# comment_id\tsentence_index\tcategory_id|NONE"]
    for n, comment in enumerate(COMMENTS):
        cid = f"c{n + 1:03d}"
        text = ". ".join(s for s, _ in comment) + "."
        records.append({"id": cid, "video_id": f"v{n % 4 + 1}", "author_id": f"u{(n * 7) % 23 + 1}", "text": text})
        for idx, (sent, cats) in enumerate(comment):
            vocab.update(tokenize(sent))
            if cats is None:
                continue
            for c in cats or ["NONE"]:
                labels.append(f"{cid}\t{idx}\t{c}")
    for line in (ROOT / "data" / "factor_catalog.tsv").read_text().splitlines():
        if line.startswith("FACTOR"):
            vocab.update(tokenize(line.split("\t")[2]))

    with open(OUT / "comments.jsonl", "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    (OUT / "labels.tsv").write_text("\n".join(labels) + "\n")

    with open(OUT / "vectors.txt", "w") as f:
        for w in sorted(vocab):
            v = vector(rng, axis.get(w))
            f.write(w + " " + " ".join(f"{x:.6f}" for x in v) + "\n")

    # Phase-one detection ratings: three annotators mark each annotated
    # sentence as attributing or not; every eighth item has one dissenter.
    rows = ["# item\trater1\trater2\trater3"]
    item = 0
    for n, comment in enumerate(COMMENTS):
        for idx, (_, cats) in enumerate(comment):
            if cats is None:
                continue
            r = ["yes" if cats else "no"] * 3
            if item % 8 == 3:
                r[item % 3] = "no" if cats else "yes"
            rows.append(f"c{n + 1:03d}/{idx}\t" + "\t".join(r))
            item += 1
    (OUT / "ratings.tsv").write_text("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
