"""
Harness Digest
Merkle digest over the files of an experiment directory.

Each file becomes one leaf, hashed together with its relative path, and
leaves are ordered by path. Two experiment directories hold identical
results iff their roots match; a proof shows that one file belongs to a
given root without rehashing the rest.
"""

import hashlib
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union


def _hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def leaf_hash(relative_path: str, content: bytes) -> str:
    """Hash of one file, bound to its relative path."""
    return _hash(relative_path.encode() + b"\0" + content)


class MerkleNode:
    """Node in a Merkle tree."""

    def __init__(self, digest: Optional[str] = None, left=None, right=None):
        self.left = left
        self.right = right
        if digest is not None:
            self.hash = digest
        else:
            right_hash = right.hash if right else left.hash
            self.hash = _hash((left.hash + right_hash).encode())


class MerkleTree:
    """
    Merkle tree over precomputed leaf hashes.

    Odd levels pair the last node with itself.
    """

    EMPTY_ROOT = _hash(b"")

    def __init__(self, leaf_hashes: Iterable[str]):
        self.leaves = [MerkleNode(digest) for digest in leaf_hashes]
        self.root = self._build_tree(self.leaves) if self.leaves else None

    def _build_tree(self, nodes: List[MerkleNode]) -> MerkleNode:
        if len(nodes) == 1:
            return nodes[0]
        parents = []
        for i in range(0, len(nodes), 2):
            left = nodes[i]
            right = nodes[i + 1] if i + 1 < len(nodes) else nodes[i]
            parents.append(MerkleNode(left=left, right=right))
        return self._build_tree(parents)

    def get_root_hash(self) -> str:
        """Root hash, or EMPTY_ROOT for a tree without leaves."""
        return self.root.hash if self.root else self.EMPTY_ROOT

    def generate_proof(self, index: int) -> List[Tuple[str, str]]:
        """
        Sibling hashes from leaf ``index`` up to the root.

        Returns:
            List of (hash, position) pairs, position being 'left' or 'right'
        """
        if not 0 <= index < len(self.leaves):
            raise IndexError(f"leaf {index} out of range")
        proof = []
        level = self.leaves[:]
        position = index
        while len(level) > 1:
            if position % 2 == 0:
                sibling = level[position + 1] if position + 1 < len(level) else level[position]
                proof.append((sibling.hash, "right"))
            else:
                proof.append((level[position - 1].hash, "left"))
            parents = []
            for i in range(0, len(level), 2):
                right = level[i + 1] if i + 1 < len(level) else level[i]
                parents.append(MerkleNode(left=level[i], right=right))
            level = parents
            position //= 2
        return proof

    @staticmethod
    def verify_proof(leaf: str, proof: List[Tuple[str, str]], root_hash: str) -> bool:
        """True when ``proof`` leads from ``leaf`` to ``root_hash``."""
        current = leaf
        for sibling, position in proof:
            combined = sibling + current if position == "left" else current + sibling
            current = _hash(combined.encode())
        return current == root_hash


def directory_leaves(directory: Union[str, Path],
                     exclude: Iterable[str] = ()) -> List[Tuple[str, str]]:
    """(relative path, leaf hash) for every file under ``directory``, sorted by path."""
    base = Path(directory)
    skipped = set(exclude)
    leaves = []
    for path in sorted(p for p in base.rglob("*") if p.is_file()):
        relative = path.relative_to(base).as_posix()
        if relative in skipped:
            continue
        leaves.append((relative, leaf_hash(relative, path.read_bytes())))
    return leaves


def digest_directory(directory: Union[str, Path], exclude: Iterable[str] = ()) -> str:
    """Merkle root over every file under ``directory`` except the excluded relative paths."""
    return MerkleTree(digest for _, digest in directory_leaves(directory, exclude)).get_root_hash()


def prove_file(directory: Union[str, Path], relative_path: str,
               exclude: Iterable[str] = ()) -> Tuple[str, List[Tuple[str, str]], str]:
    """Returns (leaf hash, proof, root) for one file of the directory."""
    leaves = directory_leaves(directory, exclude)
    names = [name for name, _ in leaves]
    if relative_path not in names:
        raise FileNotFoundError(relative_path)
    tree = MerkleTree(digest for _, digest in leaves)
    index = names.index(relative_path)
    return leaves[index][1], tree.generate_proof(index), tree.get_root_hash()
