"""
Building prompts from tags
==========================

Turn image tags into a scene-level prompt, then draw per-object prompts
from descriptor lists.
"""

import numpy as np

from pseudodomain import prompts
from pseudodomain.dataset import synth_toy_dataset

# %%
# Tags from the stub tagger. A mid-gray image reads as dim, a bright one as bright.
ds = synth_toy_dataset(seed=0, n_images=3)
tagger = prompts.StubTagger()
for img in ds:
    print(img.id, list(prompts.extract_tags(img, tagger)))

# %%
# Mix source tags with the tags of a target style, then decode.
source_tags = prompts.TagSet(["cityscapes", "street"])
night = prompts.TagSet(["night", "dark"])
print(prompts.decode_prompt(prompts.augment_tags(source_tags, night)).text)

# %%
# Per-object prompts. The object phrase always agrees with the box category.
sets = prompts.default_descriptor_sets()
for seed in range(4):
    print(prompts.gen_instance_prompt(sets, "car", seed).text)

# weather draws are uniform over the list
draws = [prompts.gen_instance_prompt(sets, "person", s).weather for s in range(2000)]
values, counts = np.unique(draws, return_counts=True)
print(dict(zip(values, np.round(counts / len(draws), 3))))
