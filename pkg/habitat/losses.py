"""Training objectives: cross-entropy and the supervised contrastive loss."""

import torch
import torch.nn.functional as F

from .exceptions import DegenerateBatchError, MetricsError


def cross_entropy_loss(scores: torch.Tensor, true_class) -> torch.Tensor:
    """``-log softmax(scores)[true_class]``, averaged over a batch when given one."""
    scores = torch.as_tensor(scores)
    target = torch.as_tensor(true_class, dtype=torch.long, device=scores.device)
    single = scores.dim() == 1
    if single:
        scores, target = scores.unsqueeze(0), target.reshape(1)
    n_classes = scores.shape[-1]
    if target.numel() and (int(target.min()) < 0 or int(target.max()) >= n_classes):
        raise MetricsError(f'class index out of range for {n_classes} classes')
    return F.cross_entropy(scores, target)


def supcon_loss(projections: torch.Tensor, labels, temperature: float = 0.1) -> torch.Tensor:
    """Supervised contrastive loss with the mean over positives outside the log.

    For anchor i with positives P(i) (same label, not i) and candidates A(i)
    (everything but i)::

        loss_i = -1/|P(i)| * sum_p log( exp(z_i.z_p / t) / sum_a exp(z_i.z_a / t) )

    The result is the mean over anchors with at least one positive. Inputs are
    expected to be unit vectors.
    """
    if temperature <= 0:
        raise ValueError(f'temperature must be positive, got {temperature}')
    labels = torch.as_tensor(labels, device=projections.device).reshape(-1)
    n = projections.shape[0]
    if n < 2 or labels.shape[0] != n:
        raise DegenerateBatchError(f'need >= 2 projections with one label each, got {n} and {labels.shape[0]}')

    self_mask = torch.eye(n, dtype=torch.bool, device=projections.device)
    positives = (labels[:, None] == labels[None, :]) & ~self_mask
    n_positives = positives.sum(dim=1)
    anchors = n_positives > 0
    if not bool(anchors.any()):
        raise DegenerateBatchError('no anchor in the batch has a same-class partner')

    logits = (projections @ projections.T) / temperature
    logits = logits.masked_fill(self_mask, float('-inf'))
    log_prob = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    positive_log_prob = log_prob.masked_fill(~positives, 0.0).sum(dim=1)
    per_anchor = -positive_log_prob[anchors] / n_positives[anchors]
    return per_anchor.mean()
