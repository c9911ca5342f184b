#!/usr/bin/env python3
"""Generate the bundled synthetic parallel corpus.

Source: space-separated Latin pseudo-words. Target: unsegmented CJK text with
a different word order. Some raw lines carry fullwidth forms, HTML
references, traditional characters, blank sides or invalid bytes so the
cleaning stage has work to do.
"""

import argparse
import json
import os
import random

SUBJ = {"mala": "我", "tavo": "你", "seni": "他", "kora": "她", "mitu": "我们",
        "nareb": "老师", "pulan": "学生", "dekor": "医生", "sawin": "朋友"}
VERB = {"kin": "吃", "du": "看", "lek": "买", "pai": "去", "hen": "喜欢",
        "tam": "做", "rian": "学习", "khai": "卖", "som": "写"}
OBJ = {"kaopa": "米饭", "nangsu": "书", "plama": "鱼", "talat": "市场", "phasa": "语言",
       "ngan": "工作", "rotyon": "汽车", "chaya": "茶", "jotmai": "信", "phonla": "水果"}
ADJ = {"dii": "好", "yai": "大", "lek": "小", "mai": "新", "kao": "旧", "suay": "漂亮"}
TIME = {"wanni": "今天", "prungni": "明天", "muawan": "昨天", "tonchao": "早上"}
PLACE = {"thiban": "在家", "thirongrian": "在学校", "thimuang": "在城里"}
NUM = {"nueng": "一", "song": "两", "sam": "三"}
# Target characters written in traditional form in some raw lines.
TRADITIONAL = {"们": "們", "师": "師", "学": "學", "书": "書", "鱼": "魚", "买": "買",
               "卖": "賣", "车": "車", "场": "場", "语": "語", "写": "寫", "信": "信"}


def sentence(rng):
    s_src, s_tgt = rng.choice(list(SUBJ.items()))
    v_src, v_tgt = rng.choice(list(VERB.items()))
    o_src, o_tgt = rng.choice(list(OBJ.items()))
    src, tgt_pre, tgt_obj = [s_src, v_src], [s_tgt], ""
    if rng.random() < 0.4:
        n_src, n_tgt = rng.choice(list(NUM.items()))
        src.append(n_src)
        tgt_obj += n_tgt + "个"
    if rng.random() < 0.5:
        a_src, a_tgt = rng.choice(list(ADJ.items()))
        src.append(o_src)
        src.append(a_src)
        tgt_obj += a_tgt + "的" + o_tgt
    else:
        src.append(o_src)
        tgt_obj += o_tgt
    if rng.random() < 0.4:
        t_src, t_tgt = rng.choice(list(TIME.items()))
        src.insert(0, t_src)
        tgt_pre.append(t_tgt)
    if rng.random() < 0.3:
        p_src, p_tgt = rng.choice(list(PLACE.items()))
        src.append(p_src)
        tgt_pre.append(p_tgt)
    tgt = "".join(tgt_pre) + v_tgt + tgt_obj + "。"
    return " ".join(src) + " .", tgt


def fullwidth(text):
    return "".join(chr(ord(c) + 0xFEE0) if "!" <= c <= "~" else c for c in text)


def corrupt(rng, src, tgt):
    r = rng.random()
    if r < 0.05:
        return fullwidth(src), tgt
    if r < 0.08:
        return src.replace(" .", " &amp; ."), tgt.replace("。", "&#12290;")
    if r < 0.13:
        return src, "".join(TRADITIONAL.get(c, c) for c in tgt)
    return src, tgt


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "synthetic"))
    ap.add_argument("--pairs", type=int, default=1600)
    ap.add_argument("--seed", type=int, default=20221)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    os.makedirs(args.out, exist_ok=True)

    src_lines, tgt_lines = [], []
    for i in range(args.pairs):
        src, tgt = corrupt(rng, *sentence(rng))
        if i % 97 == 13:
            tgt = "   "
        src_lines.append(src.encode("utf-8"))
        tgt_lines.append(tgt.encode("utf-8"))
    src_lines[41] = b"mala kin \xff\xfe kaopa ."

    with open(os.path.join(args.out, "raw.src"), "wb") as f:
        f.write(b"\n".join(src_lines) + b"\n")
    with open(os.path.join(args.out, "raw.tgt"), "wb") as f:
        f.write(b"\n".join(tgt_lines) + b"\n")

    with open(os.path.join(args.out, "t2s_sample.tsv"), "w", encoding="utf-8") as f:
        f.write("# traditional\tsimplified\n")
        for trad, simp in sorted((t, s) for s, t in TRADITIONAL.items() if s != t):
            f.write(f"{trad}\t{simp}\n")

    words = set()
    for table in (SUBJ, VERB, OBJ, ADJ, TIME, PLACE):
        words.update(table.values())
    words.update(["个", "的"])
    with open(os.path.join(args.out, "tgt_lexicon.txt"), "w", encoding="utf-8") as f:
        f.write("# target words\n")
        for w in sorted(words):
            f.write(w + "\n")

    config = {
        "profile": "toy",
        "data": {"src": "raw.src", "tgt": "raw.tgt", "mapping": "t2s_sample.tsv",
                 "tgt_lexicon": "tgt_lexicon.txt"},
        "split": {"holdout": 100},
        "bpe": {"src": {"merges": 60}, "tgt": {"merges": 40}},
        "model": {"enc_layers": 1, "dec_layers": 1, "d_model": 32, "heads": 2, "rel_clip": 8, "dropout": 0.1},
        "train": {"warmup_steps": 40, "token_budget": 600, "max_tokens": 600, "epochs": 4,
                  "save_interval_steps": 5, "lr_scale": 2.0, "seed": 7, "average_last": 3},
        "decode": {"beam": 2, "alpha": 1.0, "max_len_offset": 10},
        "score": {"max_n": 4},
    }
    with open(os.path.join(args.out, "toy.json"), "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2, ensure_ascii=False)
        f.write("\n")


if __name__ == "__main__":
    main()
