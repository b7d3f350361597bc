"""In-memory dataset containers shared by io, synth and trainer."""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .imaging import Illuminant, LinearImage


@dataclass(eq=False)
class Entry:
    id: str
    illuminant: Illuminant
    sensor_name: str = ""
    split: Optional[str] = None
    image: Optional[LinearImage] = None
    loader: Optional[Callable[[], LinearImage]] = field(default=None, repr=False)

    def load_image(self):
        if self.image is None:
            if self.loader is None:
                raise ValueError(f"entry {self.id} has neither image nor loader")
            return self.loader()
        return self.image


@dataclass(eq=False)
class Dataset:
    entries: list
    sensor_name: str = ""
    white_point: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def select(self, split):
        """Entries whose split tag equals ``split``; ``None`` keeps everything."""
        if split is None:
            return self
        return Dataset([e for e in self.entries if e.split == split], self.sensor_name,
                       self.white_point)
