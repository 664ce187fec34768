"""Moving between adapter families and writing them to disk."""
import tempfile
from pathlib import Path

import numpy as np

from trilora import LoRAAdapter, delta_weight, lora_to_trilora, trilora_to_lora, truncate
from trilora.io import load_adapter, save_adapter
from trilora.linalg import compact_svd, frobenius_norm, truncation_error

rng = np.random.default_rng(0)
lora = LoRAAdapter(rng.standard_normal((16, 4)), rng.standard_normal((4, 12)), scale=0.5)
d = delta_weight(lora)

tri = lora_to_trilora(lora, 4)
print("full rank, relative change:", frobenius_norm(delta_weight(tri) - d) / frobenius_norm(d))

small = truncate(tri, 2)
print("rank 2 error:", frobenius_norm(delta_weight(small) - d),
      "bound:", truncation_error(compact_svd(d, 12).sigma, 2))

back = trilora_to_lora(small)
print("back to LoRA, exact:", np.allclose(delta_weight(back), delta_weight(small), rtol=0, atol=1e-12))

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "small.tlab"
    save_adapter(small, path)
    print(f"{path.stat().st_size} bytes on disk; reload identical:",
          load_adapter(path).U.tobytes() == small.U.tobytes())
