"""The 2D mask boundary: any source of instance masks for an image-space prompt.

Real deployments plug externally computed masks in through the file-backed
provider; tests and demos use the synthetic oracle, which serves ground-truth
masks with controllable error modes (pixel bleed, composite merging).
"""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InputError, MaskContractError


@dataclass
class MaskRequest:
    frame_id: str
    prompt: tuple                 # (u, v) pixel, floats allowed
    class_id: int


class Mask2D:
    """Boolean pixel membership backed by RLE runs over row-major pixel order."""

    def __init__(self, width: int, height: int, runs=None):
        self.width = int(width)
        self.height = int(height)
        runs = np.asarray(runs if runs is not None else [], dtype=np.int64).reshape(-1, 2)
        if len(runs):
            order = np.argsort(runs[:, 0], kind="stable")
            runs = runs[order]
            starts, lengths = runs[:, 0], runs[:, 1]
            if (lengths <= 0).any():
                raise InputError("RLE run lengths must be positive")
            ends = starts + lengths
            if (starts[1:] < ends[:-1]).any():
                raise InputError("RLE runs overlap")
            if starts[0] < 0 or ends[-1] > self.width * self.height:
                raise InputError("RLE runs exceed image bounds")
        self.runs = runs

    @classmethod
    def from_rle_list(cls, width, height, flat):
        if len(flat) % 2:
            raise InputError("flat RLE list must have even length")
        return cls(width, height, np.asarray(flat, dtype=np.int64).reshape(-1, 2))

    def to_rle_list(self):
        return [int(v) for v in self.runs.reshape(-1)]

    @classmethod
    def from_bool_array(cls, arr):
        arr = np.asarray(arr, dtype=bool)
        flat = arr.reshape(-1)
        if not flat.any():
            return cls(arr.shape[1], arr.shape[0], [])
        padded = np.concatenate([[False], flat, [False]])
        edges = np.diff(padded.astype(np.int8))
        starts = np.nonzero(edges == 1)[0]
        ends = np.nonzero(edges == -1)[0]
        runs = np.column_stack([starts, ends - starts])
        return cls(arr.shape[1], arr.shape[0], runs)

    def to_bool_array(self) -> np.ndarray:
        arr = np.zeros(self.width * self.height, dtype=bool)
        for start, length in self.runs:
            arr[start : start + length] = True
        return arr.reshape(self.height, self.width)

    @property
    def area(self) -> int:
        return int(self.runs[:, 1].sum()) if len(self.runs) else 0

    def contains(self, u, v) -> bool:
        """Membership of the pixel holding continuous coordinates (u, v)."""
        col, row = int(np.floor(u)), int(np.floor(v))
        if not (0 <= col < self.width and 0 <= row < self.height):
            return False
        return bool(self.contains_pixel_ids(np.array([row * self.width + col]))[0])

    def contains_pixel_ids(self, pixel_ids) -> np.ndarray:
        """Vectorized membership test for flat row-major pixel ids."""
        pixel_ids = np.asarray(pixel_ids, dtype=np.int64)
        if not len(self.runs):
            return np.zeros(len(pixel_ids), dtype=bool)
        starts = self.runs[:, 0]
        ends = starts + self.runs[:, 1]
        pos = np.searchsorted(starts, pixel_ids, side="right") - 1
        valid = pos >= 0
        out = np.zeros(len(pixel_ids), dtype=bool)
        out[valid] = pixel_ids[valid] < ends[pos[valid]]
        return out

    def dilated(self, radius: int) -> "Mask2D":
        """Euclidean-disk dilation by ``radius`` pixels (0 returns self)."""
        if radius <= 0:
            return self
        yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
        disk = xx * xx + yy * yy <= radius * radius
        grown = ndimage.binary_dilation(self.to_bool_array(), structure=disk)
        return Mask2D.from_bool_array(grown)

    def union(self, other: "Mask2D") -> "Mask2D":
        if (other.width, other.height) != (self.width, self.height):
            raise InputError("mask dimensions differ")
        return Mask2D.from_bool_array(self.to_bool_array() | other.to_bool_array())


def _check_request(request: MaskRequest, width, height):
    u, v = request.prompt
    if not (0 <= u < width and 0 <= v < height):
        raise InputError(
            f"prompt ({u:.1f}, {v:.1f}) outside image {width}x{height}"
        )


def _checked(mask, request):
    if mask is not None and not mask.contains(*request.prompt):
        raise MaskContractError(
            f"provider mask does not contain prompt {request.prompt} "
            f"(frame {request.frame_id})"
        )
    return mask


class SyntheticOracleProvider:
    """Serves ground-truth masks with configurable error modes.

    ``bleed_pixels`` dilates the returned mask, leaking onto whatever lies
    behind the instance in image space. ``composite_merge`` controls
    multi-part instances (a cyclist's rider and bicycle are stored as two
    parts sharing an instance id): False returns only the part containing
    the prompt, True returns the union of all parts.
    """

    def __init__(self, frame_masks, bleed_pixels: int = 0, composite_merge: bool = True):
        # frame_masks: {frame_id: (width, height, [(instance_id, class_id, Mask2D), ...])}
        if bleed_pixels < 0:
            raise InputError("bleed_pixels must be >= 0")
        self.frame_masks = frame_masks
        self.bleed_pixels = int(bleed_pixels)
        self.composite_merge = bool(composite_merge)

    @classmethod
    def from_mask_files(cls, mask_docs, **kwargs):
        """mask_docs: {frame_id: (width, height, [(inst, cls, rle-list), ...])}."""
        frame_masks = {}
        for frame_id, (w, h, entries) in mask_docs.items():
            frame_masks[frame_id] = (
                w,
                h,
                [(inst, c, Mask2D.from_rle_list(w, h, rle)) for inst, c, rle in entries],
            )
        return cls(frame_masks, **kwargs)

    def get_mask(self, request: MaskRequest):
        if request.frame_id not in self.frame_masks:
            raise KeyError(f"unknown frame {request.frame_id!r}")
        width, height, entries = self.frame_masks[request.frame_id]
        _check_request(request, width, height)
        hit = None
        for inst, cls, mask in entries:
            if mask.contains(*request.prompt):
                hit = (inst, cls, mask)
                break
        if hit is None:
            return None
        inst_id, _, part = hit
        if self.composite_merge:
            merged = None
            for other_inst, _, mask in entries:
                if other_inst == inst_id:
                    merged = mask if merged is None else merged.union(mask)
            part = merged
        return _checked(part.dilated(self.bleed_pixels), request)


class FileBackedProvider:
    """Externally computed masks, one stored mask per (frame, instance).

    Lookup is by class: among the frame's stored masks of the requested
    class, the one containing the prompt pixel is returned (smallest area
    wins if several contain it). Class-matching masks that all miss the
    prompt indicate stale or misaligned mask files, which is reported as a
    contract violation rather than silently treated as background.
    """

    def __init__(self, mask_docs):
        # mask_docs: {frame_id: (width, height, [(inst, cls, rle-list), ...])}
        self.frames = {}
        for frame_id, (w, h, entries) in mask_docs.items():
            merged = {}
            for inst, cls, rle in entries:
                mask = Mask2D.from_rle_list(w, h, rle)
                if inst in merged:
                    merged[inst] = (merged[inst][0], merged[inst][1].union(mask))
                else:
                    merged[inst] = (cls, mask)
            self.frames[frame_id] = (w, h, merged)

    def get_mask(self, request: MaskRequest):
        if request.frame_id not in self.frames:
            raise KeyError(f"unknown frame {request.frame_id!r}")
        width, height, merged = self.frames[request.frame_id]
        _check_request(request, width, height)
        candidates = [
            (mask.area, inst, mask)
            for inst, (cls, mask) in merged.items()
            if cls == request.class_id
        ]
        if not candidates:
            return None
        containing = sorted(
            (c for c in candidates if c[2].contains(*request.prompt)),
            key=lambda c: (c[0], c[1]),
        )
        if not containing:
            raise MaskContractError(
                f"no stored {request.class_id}-class mask of frame "
                f"{request.frame_id} contains prompt {request.prompt}"
            )
        return containing[0][2]
