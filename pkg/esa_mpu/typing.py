from typing import Sequence

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]

IntArray = npt.NDArray[np.int64]

ArrayLike = npt.ArrayLike

IndexSets = Sequence[IntArray]
