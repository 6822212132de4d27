"""Independent brute-force reference implementations used by the tests."""
import math


def ranking(probe, gallery, distance):
    def cos(a, b):
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(x * x for x in b))
        if na == 0 or nb == 0:
            return 1.0
        return min(max(1.0 - sum(x * y for x, y in zip(a, b)) / (na * nb), 0.0), 2.0)

    def sq(a, b):
        return sum((x - y) ** 2 for x, y in zip(a, b))

    f = cos if distance == "cosine" else sq
    d = [f(probe, g) for g in gallery]
    # selection sort keeps ties in index order
    order, left = [], list(range(len(gallery)))
    while left:
        best = left[0]
        for j in left:
            if d[j] < d[best]:
                best = j
        order.append(best)
        left.remove(best)
    return order


def cmc(rankings, probe_ids, gallery_ids, max_rank=None):
    length = max(len(r) for r in rankings)
    if max_rank is not None:
        length = min(length, max_rank)
    out = []
    for r in range(1, length + 1):
        good = 0
        for order, pid in zip(rankings, probe_ids):
            if any(gallery_ids[g] == pid for g in order[:r]):
                good += 1
        out.append(100.0 * good / len(probe_ids))
    return out


def average_precision(order, relevant):
    precisions = []
    for k, g in enumerate(order, start=1):
        if g in relevant:
            precisions.append(sum(1 for x in order[:k] if x in relevant) / k)
    return sum(precisions) / len(relevant)


def mean_ap(rankings, relevance):
    aps = [average_precision(list(r), set(rel)) for r, rel in zip(rankings, relevance)]
    return 100.0 * sum(aps) / len(aps)


def attribute_accuracy(scores, gt):
    n = sum(gt)
    idx = sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:n]
    return sum(1 for i in idx if gt[i]) / n
