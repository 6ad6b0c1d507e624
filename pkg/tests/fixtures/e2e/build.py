"""Rebuild the end-to-end replay fixture.

Writes the four small datasets, then drives the real CLI in record mode
against a deterministic in-process model so every request digest in
``replay.jsonl`` is exactly what the pipeline issues. ``expected.json``
captures the recorded run's outputs for regression comparison.

    python3 tests/fixtures/e2e/build.py

Rerun whenever prompt templates or the manifest format change.
"""

from __future__ import annotations

import hashlib
import json
import sys
import tempfile
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parents[1]))

import e2e_pipeline  # noqa: E402
from selfdocs import cli  # noqa: E402
from selfdocs.gateway import FunctionBackend  # noqa: E402

TOPICS = ("geography", "science", "history")

# (question, gold, topic, [three retrieved passages]); FEVER gold is the label
DATA = {
    "tqa": [
        ("What is the capital city of Australia?", "Canberra", 0,
         ["Canberra is the capital city of Australia.", "Sydney is the largest city in Australia.",
          "Melbourne hosted the 1956 Olympics."]),
        ("Which river flows through Cairo?", "Nile", 0,
         ["Cairo lies on the banks of the Nile.", "Egypt is in north Africa.", "The Sahara is a desert."]),
        ("Which mountain is the tallest above sea level?", "Everest", 0,
         ["Mount Everest rises 8849 metres.", "K2 is the second highest mountain.", "The Alps are in Europe."]),
        ("What gas do plants absorb for photosynthesis?", "carbon dioxide", 1,
         ["Plants take in carbon dioxide and release oxygen.", "Chlorophyll is green.", "Roots absorb water."]),
        ("What is the chemical symbol for gold?", "Au", 1,
         ["Gold has the chemical symbol Au.", "Silver is Ag.", "Iron rusts in moist air."]),
        ("Which planet is known as the Red Planet?", "Mars", 1,
         ["Mars appears red because of iron oxide.", "Venus is the hottest planet.", "Jupiter is a gas giant."]),
        ("Who was the first emperor of Rome?", "Augustus", 2,
         ["Augustus became the first Roman emperor in 27 BC.", "Julius Caesar was assassinated.",
          "Rome was founded in 753 BC."]),
        ("In which year did the Berlin Wall fall?", "1989", 2,
         ["The Berlin Wall fell in November 1989.", "Germany reunified in 1990.", "The Cold War ended soon after."]),
    ],
    "hotpotqa": [
        ("Which country borders both France and Austria?", "Switzerland", 0,
         ["Switzerland borders France to the west.", "Switzerland borders Austria to the east.",
          "Italy borders France."]),
        ("What ocean lies west of the country whose capital is Lisbon?", "Atlantic Ocean", 0,
         ["Lisbon is the capital of Portugal.", "Portugal faces the Atlantic Ocean to the west.",
          "Spain borders Portugal."]),
        ("Which lake lies on the border of the country that hosts Kampala?", "Lake Victoria", 0,
         ["Kampala is the capital of Uganda.", "Lake Victoria is shared by Uganda, Kenya and Tanzania.",
          "The Nile leaves Lake Victoria."]),
        ("Who discovered the element named after the Curie family's homeland?", "Marie Curie", 1,
         ["Polonium is named after Poland.", "Marie Curie discovered polonium in 1898.", "Radium glows faintly."]),
        ("Which scientist proposed the theory later confirmed by the 1919 eclipse?", "Albert Einstein", 1,
         ["The 1919 eclipse confirmed general relativity.", "Albert Einstein proposed general relativity.",
          "Eddington led the expedition."]),
        ("What is the boiling point in Celsius of the liquid that covers most of Earth?", "100", 1,
         ["Water covers most of the Earth's surface.", "Water boils at 100 degrees Celsius at sea level.",
          "Ice floats on water."]),
        ("Which queen ruled England when the Spanish Armada was defeated?", "Elizabeth I", 2,
         ["The Spanish Armada was defeated in 1588.", "Elizabeth I reigned from 1558 to 1603.",
          "Drake sailed around the world."]),
        ("Who was president of the United States when the Apollo 11 landing happened?", "Richard Nixon", 2,
         ["Apollo 11 landed on the Moon in July 1969.", "Richard Nixon was president from 1969 to 1974.",
          "Neil Armstrong walked first."]),
    ],
    "fever": [
        ("Canberra is the capital of Australia.", "SUPPORTS", 0,
         ["Canberra is the capital city of Australia.", "Sydney is larger.", "Australia is a federation."]),
        ("The Danube flows into the Pacific Ocean.", "REFUTES", 0,
         ["The Danube empties into the Black Sea.", "Vienna lies on the Danube.", "Budapest spans the river."]),
        ("Iceland is located in the Atlantic Ocean.", "SUPPORTS", 0,
         ["Iceland is an island in the North Atlantic.", "Reykjavik is its capital.", "Iceland has volcanoes."]),
        ("Water is composed of hydrogen and oxygen.", "SUPPORTS", 1,
         ["A water molecule has two hydrogen atoms and one oxygen atom.", "Ice is solid water.",
          "Steam is water vapour."]),
        ("The Sun orbits the Earth.", "REFUTES", 1,
         ["The Earth orbits the Sun once a year.", "The Sun is a star.", "Copernicus proposed heliocentrism."]),
        ("Diamonds are made of carbon.", "SUPPORTS", 1,
         ["Diamond is a crystalline form of carbon.", "Graphite is also carbon.", "Diamonds are very hard."]),
        ("Napoleon won the Battle of Waterloo.", "REFUTES", 2,
         ["Napoleon was defeated at Waterloo in 1815.", "Wellington led the allied army.", "Napoleon was exiled."]),
        ("The Magna Carta was sealed in 1215.", "SUPPORTS", 2,
         ["King John sealed the Magna Carta in 1215.", "Runnymede is by the Thames.", "Barons rebelled."]),
    ],
    "eli5": [
        ("Why is the sky blue during the day?", "sunlight scatters off air molecules and blue light scatters most", 0,
         ["Rayleigh scattering makes blue light scatter most.", "Sunlight contains all colours.",
          "Sunsets look red."]),
        ("Why do rivers curve instead of flowing straight?", "water erodes the outer bank and deposits on the inner bank", 0,
         ["Meanders form as water erodes the outer bank.", "Sediment deposits on the inner bank.",
          "Oxbow lakes form from cut-off meanders."]),
        ("Why are deserts cold at night?", "dry air and clear skies let heat escape quickly after sunset", 0,
         ["Dry air holds little heat.", "Clear skies let heat radiate away at night.", "Sand heats quickly."]),
        ("Why does ice float on water?", "ice is less dense than liquid water because of its crystal structure", 1,
         ["Ice forms an open crystal lattice.", "Ice is less dense than liquid water.", "Most solids sink."]),
        ("How do vaccines train the immune system?", "they show the body a harmless piece of a germ so it makes antibodies", 1,
         ["Vaccines contain harmless antigens.", "The body makes antibodies and memory cells.",
          "Booster shots refresh memory."]),
        ("Why do we see lightning before hearing thunder?", "light travels much faster than sound", 1,
         ["Light travels at about 300000 km per second.", "Sound travels at about 343 metres per second.",
          "Thunder is caused by heated air."]),
        ("Why did the Roman Empire split in two?", "it was too large to govern from one place so it was divided for administration", 2,
         ["Diocletian divided the empire for administration.", "The empire was hard to govern from Rome.",
          "Constantinople became the eastern capital."]),
        ("Why was the printing press so important?", "it made books cheap so knowledge spread quickly", 2,
         ["Gutenberg built his press around 1440.", "Printed books were far cheaper than manuscripts.",
          "Literacy rose across Europe."]),
    ],
}


def records(task_name: str) -> list[dict]:
    out = []
    for i, (q, gold, _, passages) in enumerate(DATA[task_name]):
        rec = {"id": f"{task_name}-{i}", "question": q}
        if task_name == "fever":
            rec["label"] = gold
        else:
            rec["answers"] = [gold]
        rec["retrieved"] = [{"rank": r, "text": t} for r, t in enumerate(passages, 1)]
        out.append(rec)
    return out


def write_datasets(dest: Path) -> None:
    for name in DATA:
        with open(dest / f"{name}.jsonl", "w", encoding="utf-8") as f:
            for rec in records(name):
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _jitter(text: str, i: int) -> float:
    return hashlib.sha256(f"{text}|{i}".encode()).digest()[0] / 255.0 * 0.05


class FakeModel:
    """Deterministic stand-in that knows each query's gold answer.

    Generation recalls the answer for two of every three replicates; the
    rewriter prefixes a chatty opener; the reader answers correctly only
    when the gold answer is present in its background.
    """

    def __init__(self):
        self.items = [(q, gold, topic, name) for name, rows in DATA.items() for q, gold, topic, _ in rows]

    def _target(self, content: str):
        hits = [(content.rfind(q), q, gold, topic, name) for q, gold, topic, name in self.items if q in content]
        if not hits:
            raise KeyError(content[:80])
        return max(hits)[1:]

    def chat(self, req) -> str:
        content = req.messages[-1].content
        if req.model_id == cli.DEFAULT_TRANSFORM_MODEL:
            context = content.split("\n\n")[-1] if "\n\n" in content else content
            return "So, here's the deal: " + context.strip()
        q, gold, topic, name = self._target(content)
        if req.temperature > 0:
            h = hashlib.sha256(content.encode()).digest()[0]
            fact = gold if name != "fever" else ("this is well documented" if gold == "SUPPORTS" else "this is false")
            if h % 3:
                return f"An encyclopedic note on {TOPICS[topic]}: {fact}."
            return f"An encyclopedic note on {TOPICS[topic]} with no firm conclusion."
        background = content.split(" User: ")[0]
        if name == "fever":
            return "False" if "this is false" in background else "True"
        if gold.lower() in background.lower():
            return gold if name != "eli5" else f"Basically, {gold}."
        return "I am not sure" if name != "eli5" else "It is complicated and depends on many factors."

    def embed(self, text: str) -> list[float]:
        topic = next(t for q, _, t, _ in self.items if text.startswith(q))
        v = [_jitter(text, i) for i in range(len(TOPICS))]
        v[topic] += 1.0
        return v


def main() -> None:
    write_datasets(HERE)
    fake = FakeModel()
    trace = HERE / "replay.jsonl"
    if trace.exists():
        trace.unlink()
    original = cli.LiveBackend
    cli.LiveBackend = lambda: FunctionBackend(fake.chat, fake.embed)
    try:
        with tempfile.TemporaryDirectory() as tmp:
            result = e2e_pipeline.run(Path(tmp), ["--backend", "record", "--record-to", str(trace)])
    finally:
        cli.LiveBackend = original
    expected = {k: v for k, v in result.items() if k != "calls"}
    (HERE / "expected.json").write_text(json.dumps(expected, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{sum(1 for _ in open(trace))} trace records, {len(result['calls'])} backend calls")


if __name__ == "__main__":
    main()
