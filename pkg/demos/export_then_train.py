# The exporter and the engine share exactly two interfaces: the corpus
# JSONL and the EMB1 binary file. This script walks the full handoff with
# a tiny local checkpoint standing in for a real pretrained encoder.

import json
import tempfile
from pathlib import Path

from embed_export import ExportJob, export, testing

from hierclass.encoder import load_embeddings, pool_mean

work = Path(tempfile.mkdtemp(prefix="emb1-demo-"))

# a toy corpus; labels ride along but the exporter never reads them
pages = [
    {"page_id": 1, "lang": "en", "text": "red panda habitat", "labels": ["1"]},
    {"page_id": 2, "lang": "de", "text": "kleiner panda", "labels": ["1"]},
    {"page_id": 3, "lang": "en", "text": "", "labels": ["2"]},
]
corpus = work / "pages.jsonl"
corpus.write_text("".join(json.dumps(p) + "\n" for p in pages))

model_dir = testing.tiny_model_dir(work / "encoder", d=64)
job = ExportJob(corpus_path=corpus, out_path=work / "pages.emb1",
                model_id=model_dir, seq=32, batch_size=2)
manifest = export(job)
print(f"exported {manifest['count']} records, d={manifest['d']}, "
      f"seq={manifest['seq']}")
print(f"corpus hash {manifest['corpus_sha256'][:16]}...")

# the engine side: random access by (lang, page_id), then pooling
provider = load_embeddings(work / "pages.emb1")
for page in pages:
    mat = provider.get(page["lang"], page["page_id"])
    pooled = pool_mean(mat)
    print(f"page {page['page_id']} [{page['lang']}]: {mat.n_tokens:>2} tokens, "
          f"MEAN pooled dim {pooled.dim}")
provider.close()
