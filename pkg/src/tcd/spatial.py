"""A small in-memory R-tree over axis-aligned bounding boxes.

Supports insert, delete and intersection queries; queries return a
superset of the items whose geometry intersects the box (callers follow
up with an exact geometry test).  Quadratic-split node overflow handling.
"""

from __future__ import annotations

MAX_ENTRIES = 8
MIN_ENTRIES = 3


def _union(a, b):
    return (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))


def _area(b):
    return (b[2] - b[0]) * (b[3] - b[1])


def _enlargement(node_bbox, bbox):
    return _area(_union(node_bbox, bbox)) - _area(node_bbox)


def _intersects(a, b):
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


class _Node:
    __slots__ = ("leaf", "entries", "bbox")

    def __init__(self, leaf: bool):
        self.leaf = leaf
        self.entries: list = []  # leaf: (bbox, item); internal: child _Node
        self.bbox = None

    def recompute_bbox(self):
        boxes = [e[0] if self.leaf else e.bbox for e in self.entries]
        bbox = boxes[0]
        for b in boxes[1:]:
            bbox = _union(bbox, b)
        self.bbox = bbox


class RTree:
    def __init__(self):
        self._root = _Node(leaf=True)
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def insert(self, item, bbox) -> None:
        bbox = tuple(map(float, bbox))
        split = self._insert(self._root, bbox, item)
        if split is not None:
            old_root = self._root
            self._root = _Node(leaf=False)
            self._root.entries = [old_root, split]
            self._root.recompute_bbox()
        self._size += 1

    def _insert(self, node: _Node, bbox, item):
        if node.leaf:
            node.entries.append((bbox, item))
        else:
            best = min(
                node.entries,
                key=lambda child: (_enlargement(child.bbox, bbox), _area(child.bbox)),
            )
            split = self._insert(best, bbox, item)
            if split is not None:
                node.entries.append(split)
        if len(node.entries) > MAX_ENTRIES:
            return self._split(node)
        node.recompute_bbox()
        return None

    def _split(self, node: _Node):
        entries = node.entries
        boxes = [e[0] if node.leaf else e.bbox for e in entries]
        # Quadratic pick-seeds: the pair wasting the most area.
        worst, seeds = -1.0, (0, 1)
        for i in range(len(entries)):
            for j in range(i + 1, len(entries)):
                waste = _area(_union(boxes[i], boxes[j])) - _area(boxes[i]) - _area(boxes[j])
                if waste > worst:
                    worst, seeds = waste, (i, j)
        i, j = seeds
        group_a, group_b = [entries[i]], [entries[j]]
        bbox_a, bbox_b = boxes[i], boxes[j]
        rest = [e for k, e in enumerate(entries) if k not in (i, j)]
        rest_boxes = [b for k, b in enumerate(boxes) if k not in (i, j)]
        for entry, bbox in zip(rest, rest_boxes):
            remaining = len(rest) - (len(group_a) + len(group_b) - 2)
            if len(group_a) + remaining <= MIN_ENTRIES:
                group_a.append(entry)
                bbox_a = _union(bbox_a, bbox)
                continue
            if len(group_b) + remaining <= MIN_ENTRIES:
                group_b.append(entry)
                bbox_b = _union(bbox_b, bbox)
                continue
            if _enlargement(bbox_a, bbox) <= _enlargement(bbox_b, bbox):
                group_a.append(entry)
                bbox_a = _union(bbox_a, bbox)
            else:
                group_b.append(entry)
                bbox_b = _union(bbox_b, bbox)
        node.entries = group_a
        node.recompute_bbox()
        sibling = _Node(leaf=node.leaf)
        sibling.entries = group_b
        sibling.recompute_bbox()
        return sibling

    def query(self, bbox) -> list:
        """Items whose stored bbox intersects the query bbox."""
        bbox = tuple(map(float, bbox))
        out = []
        stack = [self._root]
        while stack:
            node = stack.pop()
            if node.bbox is None or not _intersects(node.bbox, bbox):
                continue
            if node.leaf:
                out.extend(item for b, item in node.entries if _intersects(b, bbox))
            else:
                stack.extend(node.entries)
        return out

    def delete(self, item, bbox) -> bool:
        """Remove one stored (item, bbox) pair; returns whether found."""
        bbox = tuple(map(float, bbox))
        found = self._delete(self._root, bbox, item)
        if found:
            self._size -= 1
            if not self._root.leaf and len(self._root.entries) == 1:
                self._root = self._root.entries[0]
        return found

    def _delete(self, node: _Node, bbox, item) -> bool:
        if node.bbox is None or not _intersects(node.bbox, bbox):
            return False
        if node.leaf:
            for k, (b, it) in enumerate(node.entries):
                if it == item and b == bbox:
                    del node.entries[k]
                    if node.entries:
                        node.recompute_bbox()
                    else:
                        node.bbox = None
                    return True
            return False
        for child in node.entries:
            if self._delete(child, bbox, item):
                # Tolerate under-full children; reinsertion-free simplification.
                node.entries = [c for c in node.entries if c.bbox is not None]
                if node.entries:
                    node.recompute_bbox()
                else:
                    node.bbox = None
                return True
        return False
