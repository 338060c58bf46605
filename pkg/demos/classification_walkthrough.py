# One-vs-all classification of curves
#
# Labels become functions: the constant template +c for "this class" and -c
# for every other class. A test curve is assigned to the class whose
# predicted function lines up best with the template.

import numpy as np

from ovkern import Integral, ScalarKernel, SeparableKernel
from ovkern.classify import confusion_matrix, frlsc_fit, frlsc_predict, recognition_rate
from ovkern.datagen import SynthSpec, gen_classification_task
from ovkern.kernels import median_heuristic


# ## Data
#
# Three class means at least 2 apart, each sample within 1 of its mean.

spec = SynthSpec(seed=0, n=60, task="classification", n_classes=3, margin=2.0, amplitude=1.0)
data, truth = gen_classification_task(spec)
train, test = data.subset(range(30)), data.subset(range(30, 60))
print("class counts:", np.bincount(train.labels)[1:])


# ## Train

K = SeparableKernel(ScalarKernel("gaussian", median_heuristic(train.inputs)), Integral())
clf = frlsc_fit(train, K, lam=0.01, kappa=10)


# ## Scores for a single curve

p = frlsc_predict(clf, test.inputs[0])
print("true", test.labels[0], "predicted", p.label, "scores", np.round(p.scores, 3))


# ## Confusion matrix

cm = confusion_matrix(clf, test)
print(cm)
print(f"recognition rate {recognition_rate(cm):.1f}%")
