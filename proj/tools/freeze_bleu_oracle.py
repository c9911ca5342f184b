#!/usr/bin/env python3
"""Score the BLEU fixtures with sacrebleu and write the frozen expectations.

Character tokenization, no smoothing, corpus level. Output goes to
tests/data/bleu_fixtures.json and is read by the test suites.
"""

import json
import os

import sacrebleu

FIXTURES = [
    (["今天天气很好。"], ["今天天气非常好。"]),
    (["我们明天去学校。", "他喜欢喝茶。"], ["我们明天去学校上课。", "他很喜欢喝绿茶。"]),
    (["the cat sat on the mat", "a dog barked"], ["the cat sat on a mat", "the dog barked loudly"]),
    (["老师在学校写信。"], ["老师在学校里写了一封信。"]),
    (["医生买了两个大的水果。", "朋友卖书。", "她在家学习语言。"],
     ["医生买了两个大水果。", "朋友在市场卖书。", "她在家里学习语言。"]),
    (["北京是中国的首都，也是一座历史悠久的城市。"], ["北京是中国的首都，是一座有悠久历史的城市。"]),
    (["abcdefgh", "ijklmnop"], ["abcdefgh", "ijklmnpo"]),
    (["我 们 吃 米 饭 。"], ["我们吃米饭。"]),
    (["学生们昨天在城里看了一部新电影，觉得很有意思。", "你好"],
     ["学生们昨天在城里看了一部新的电影，他们觉得非常有意思。", "你好吗"]),
    (["曼谷的交通很拥挤。", "泰国菜很好吃。", "我想去清迈旅游。", "这家酒店很干净。"],
     ["曼谷交通非常拥挤。", "泰国菜非常好吃。", "我想去清迈旅行。", "这家酒店干净又舒适。"]),
]


def score(hyps, refs, n):
    bleu = sacrebleu.metrics.BLEU(tokenize="char", smooth_method="none", max_ngram_order=n)
    r = bleu.corpus_score(hyps, [refs])
    return {"score": r.score, "precisions": r.precisions, "bp": r.bp,
            "hyp_len": r.sys_len, "ref_len": r.ref_len}


def main():
    out = []
    for hyps, refs in FIXTURES:
        out.append({"hyps": hyps, "refs": refs, "bleu4": score(hyps, refs, 4), "bleu5": score(hyps, refs, 5)})
    path = os.path.join(os.path.dirname(__file__), "..", "tests", "data", "bleu_fixtures.json")
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"generator": "sacrebleu " + sacrebleu.__version__, "fixtures": out}, f,
                  ensure_ascii=False, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
