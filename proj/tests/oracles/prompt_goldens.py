"""Writes tests/golden/prompts.json: every multimodal spec's instruction over
three reference utterances, composed from the raw instruction strings with
whitespace runs collapsed to a single space.

Run: python3 tests/oracles/prompt_goldens.py
"""
import json
import pathlib
import re

HEAD = "BEGINNING OF CONVERSATION:              USER: "
CLAUSE = "Neutral, Happiness, Sadness, Anger, Frustration, Fear, Excitement, Disgust Surprise ,Unknown"
ASK = "what emotions do you think this {what} has?             you answer should be one of following emotions: "
UTTERANCES = ["I'm so sorry.", "[BREATHING] So what do you think?", "You've got a lot- oh, awesome"]


def collapse(s: str) -> str:
    return re.sub(r"\s+", " ", s)


def raw(spec: str, text: str) -> str:
    if spec in ("Gen_Image_Inp_Text_Both", "Dem_Image_Inp_Text_Both"):
        return HEAD + ASK.format(what="pair of IMAGE and TEXT") + CLAUSE + "\n   TEXT : " + text + "   Answer:   "
    if spec == "Gen_Image_Inp_Text_Txt":
        return HEAD + ASK.format(what="TEXT") + CLAUSE + "\n   TEXT : " + text + "   Answer:   "
    if spec == "Gen_Image_Inp_Text_Img":
        return HEAD + ASK.format(what="IMAGE") + CLAUSE + "\n   TEXT : " + text + "   Answer:   "
    if spec == "Gen_Image_No_Text_Img":
        return HEAD + ASK.format(what="IMAGE") + CLAUSE + "\n      Answer:   "
    if spec == "Gen_Image_Inp_Text_P1":
        return HEAD + "This is a classification Task, choose one of emotions: " + CLAUSE + "  TEXT: " + text + "\n   Answer:   "
    if spec == "Gen_Image_Inp_Text_P2":
        return HEAD + "what emotions do you perceive in one sentence ? TEXT: " + text + "\n   Answer:   "
    if spec == "Gen_Image_Inp_Text_P3":
        return text
    raise KeyError(spec)


SPECS = ["Gen_Image_Inp_Text_Both", "Gen_Image_Inp_Text_Txt", "Gen_Image_Inp_Text_Img", "Gen_Image_No_Text_Img",
         "Gen_Image_Inp_Text_P1", "Gen_Image_Inp_Text_P2", "Gen_Image_Inp_Text_P3", "Dem_Image_Inp_Text_Both"]

out = {s: [text if s == "Gen_Image_Inp_Text_P3" else collapse(raw(s, text)) for text in UTTERANCES] for s in SPECS}
path = pathlib.Path(__file__).resolve().parent.parent / "golden" / "prompts.json"
path.write_text(json.dumps(out, indent=2, ensure_ascii=False) + "\n")
print(path)
