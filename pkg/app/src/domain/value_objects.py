import numpy as np
import numpy.typing as npt

ClassIndex = int

NodeName = str

FloatArray = npt.NDArray[np.float32]

Float64Array = npt.NDArray[np.float64]

IntArray = npt.NDArray[np.int64]
