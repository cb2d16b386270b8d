#!/usr/bin/env python3
"""Generate the offline fixture literature corpus under data/corpus.

Each target area gets two short documents built from a per-area set of
laminar traits, so statements about one area share vocabulary with each
other and differ from other areas. A handful of documents carry no area
mention, mention two areas, or report measurements with units. Output is
deterministic for a given seed.
"""

import argparse
import json
import random
from pathlib import Path

AREAS = [
    ("hOc1", ["V1"]), ("hOc2", ["V2"]), ("hOc3d", []), ("hOc3v", []), ("hOc4d", []), ("hOc4v", []),
    ("hOc4la", []), ("hOc4lp", []), ("hOc5", ["V5"]), ("hOc6", []),
    ("FG1", []), ("FG2", []), ("FG3", []), ("FG4", []),
    ("Fo1", []), ("Fo2", []), ("Fo3", []), ("Fo4", []), ("Fo5", []), ("Fo6", []), ("Fo7", []),
    ("Fp1", []), ("Fp2", []),
    ("PFop", []), ("PFt", []), ("PF", []), ("PFm", []), ("PFcm", []), ("PGa", []), ("PGp", []),
    ("hIP1", []), ("hIP2", []), ("hIP3", []), ("hIP4", []), ("hIP5", []), ("hIP6", []), ("hIP7", []), ("hIP8", []),
    ("OP1", []), ("OP2", []), ("OP3", []), ("OP4", []),
    ("Id1", []), ("Id2", []), ("Id3", []), ("Ig1", []), ("Ig2", []), ("Ig3", []),
    ("STS1", []), ("STS2", []),
    ("4a", []), ("4p", []), ("3a", []), ("3b", []),
    ("5Ci", []), ("5L", []), ("5M", []),
]

LAYERS = ["I", "II", "III", "IIIa", "IIIb", "IIIc", "IV", "IVa", "IVb", "IVc", "V", "Va", "Vb", "VI", "VIa", "VIb"]

# (adjective, predicate) renderings of one property
PROPERTIES = [
    ("broad", "is broad"),
    ("thin", "is thin"),
    ("densely packed", "is densely packed"),
    ("cell-sparse", "is cell-sparse"),
    ("pyramidal-rich", "contains large pyramidal cells"),
    ("granular", "contains small granular cells"),
    ("columnar", "shows a columnar arrangement"),
    ("sharply delineated", "is sharply delineated"),
    ("blurred", "has a blurred border"),
    ("clustered", "contains clustered neurons"),
]

GLOBAL_TRAITS = [
    "has a koniocellular appearance", "has an agranular appearance", "has a dysgranular appearance",
    "shows a smooth laminar profile", "shows an undulating white matter border", "has a high overall cell density",
    "has a low overall cell density", "shows prominent vertical stripes", "shows a conspicuous inner stripe",
    "lacks a clear laminar pattern", "shows a thick cortical ribbon", "shows a thin cortical ribbon",
]

TEMPLATES = [
    "In area {a}, layer {l} {pred}.",
    "Area {a} is characterized by a {adj} layer {l}.",
    "A {adj} layer {l} is typical of area {a}.",
    "Layer {l} of area {a} {pred}.",
]

GLOBAL_TEMPLATES = ["Area {a} {g}.", "Overall, area {a} {g}."]

FILLER = [
    "Sections were stained for cell bodies and examined under the microscope.",
    "The observers were blinded to the hemisphere of origin.",
    "Borders were defined by an observer-independent procedure.",
    "These findings extend earlier descriptions of the region.",
    "Further work is needed to relate these features to function.",
    "Interindividual variability was considerable.",
]

MEASUREMENTS = [
    "In area {a}, cortical thickness averaged 2.4 mm across brains.",
    "Area {a} covered a volume of 1200 mm3 in the left hemisphere.",
    "In area {a}, cell density in layer {l} reached 45 % of the maximum.",
]

GENERIC_DOCS = [
    ("methods-staining", "Cell body staining for cortical mapping",
     "We review cell body staining protocols used for cortical mapping.",
     "Silver staining highlights neuronal cell bodies. Sections of 20 um thickness were cut. "
     "The method yields high contrast between layers. It is widely used for mapping studies."),
    ("methods-borders", "Observer-independent border detection",
     "We describe a profile-based border detection method.",
     "Profiles are sampled perpendicular to the cortical surface. Differences between profiles indicate borders. "
     "The approach reduces subjectivity. It has been applied to many regions."),
    ("review-atlas", "Probabilistic atlases of the human cortex",
     "A review of probabilistic cytoarchitectonic atlases.",
     "Probabilistic maps capture interindividual variability. They are registered to a common reference space. "
     "Atlases support the interpretation of imaging data."),
]


def area_traits(rng):
    layers = rng.sample(LAYERS, 2)
    props = rng.sample(range(len(PROPERTIES)), 3)
    laminar = rng.sample([(l, p) for l in layers for p in props], 5)
    glob = rng.sample(GLOBAL_TRAITS, 2)
    return laminar, glob


def trait_sentences(rng, name, laminar, glob):
    out = []
    for layer, pi in laminar:
        adj, pred = PROPERTIES[pi]
        for tpl in rng.sample(TEMPLATES, 2):
            out.append(tpl.format(a=name, l=layer, adj=adj, pred=pred))
    for g in glob:
        out.append(rng.choice(GLOBAL_TEMPLATES).format(a=name, g=g))
    return out


def write_doc(out_dir, doc_id, title, abstract, body, year, source):
    (out_dir / f"{doc_id}.txt").write_text(body + "\n", encoding="utf-8")
    meta = {"doc_id": doc_id, "title": title, "abstract": abstract, "year": year, "source": source}
    (out_dir / f"{doc_id}.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "corpus"))
    ap.add_argument("--seed", type=int, default=20240611)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for p in out_dir.glob("*"):
        if p.suffix in (".txt", ".json", ".tsv"):
            p.unlink()

    edges = []
    seeds = []
    names = [a for a, _ in AREAS]
    for idx, (name, aliases) in enumerate(AREAS):
        laminar, glob = area_traits(rng)
        sentences = trait_sentences(rng, name, laminar, glob)
        rng.shuffle(sentences)
        half = len(sentences) // 2
        parts = [sentences[:half + 1], sentences[half - 1:]]  # one sentence shared, exercising dedup
        neighbour = names[(idx + 1) % len(names)]
        for k, part in enumerate(parts):
            doc_id = f"{name.lower()}-{'ab'[k]}"
            body = list(part)
            body.insert(1, rng.choice(FILLER))
            body.append(rng.choice(FILLER))
            layer = rng.choice(LAYERS)
            body.insert(2, rng.choice(MEASUREMENTS).format(a=name, l=layer))
            if k == 1:
                body.insert(3, f"Unlike area {neighbour}, area {name} shows a distinct transition at layer {layer}.")
            if aliases and k == 0:
                body.append(f"Area {aliases[0]} is another common name used in the older literature.")
            title = (f"Cytoarchitecture of human area {name}" if k == 0
                     else f"Laminar features of a {rng.choice(['posterior', 'lateral', 'ventral', 'dorsal'])} cortical region")
            abstract = (f"We map area {name} in ten postmortem brains." if k == 0
                        else f"We characterize the laminar pattern of area {name} and its neighbours.")
            write_doc(out_dir, doc_id, title, abstract, " ".join(body), 2000 + (idx * 7 + k) % 24, "fixture")
        a_id, b_id = f"{name.lower()}-a", f"{name.lower()}-b"
        seeds.append(a_id)
        edges.append((b_id, a_id))
        edges.append((a_id, f"ext-{idx:03d}"))

    for doc_id, title, abstract, body in GENERIC_DOCS:
        write_doc(out_dir, doc_id, title, abstract, body, 2010, "fixture")
    edges.append(("review-atlas", "methods-borders"))
    edges.append(("review-atlas", names[0].lower() + "-a"))
    # methods-staining stays outside the citation neighbourhood of the seeds

    with open(out_dir / "citations.tsv", "w", encoding="utf-8") as f:
        f.write("# citing\tcited\n")
        for a, b in edges:
            f.write(f"{a}\t{b}\n")
    (out_dir / "seeds.lst").write_text("\n".join(seeds) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
