"""Transducer loss by the log-space forward recursion."""

from __future__ import annotations

import torch


def rnnt_loss(
    log_probs: torch.Tensor,
    targets: torch.Tensor,
    logit_lengths: torch.Tensor | None = None,
    target_lengths: torch.Tensor | None = None,
    blank: int = 0,
    reduction: str = "none",
) -> torch.Tensor:
    """Negative log-likelihood of ``targets`` summed over all alignments.

    Args:
      log_probs: ``[B, T, U+1, V]`` (or ``[T, U+1, V]``) joint log-probabilities.
      targets: ``[B, U]`` (or ``[U]``) label ids, blank excluded.
      logit_lengths: valid ``T`` per sequence; defaults to the full axis.
      target_lengths: valid ``U`` per sequence; defaults to the full axis.
      blank: blank label id.
      reduction: ``"none"``, ``"sum"`` or ``"mean"``.

    Returns:
      Per-sequence losses ``[B]`` (scalar for unbatched input) unless reduced.
      Sequences with ``T = 0`` get an infinite loss.

    The recursion ``alpha(t, u) = logaddexp(alpha(t-1, u) + blank(t-1, u),
    alpha(t, u-1) + emit(t, u-1))`` is evaluated one frame at a time; the
    label-direction chain inside a frame is a log-cumsum-exp, so only ``T``
    sequential steps are needed. Gradients come from autograd.
    """
    unbatched = log_probs.dim() == 3
    if unbatched:
        log_probs = log_probs.unsqueeze(0)
        targets = targets.reshape(1, -1)
    B, T, U1, V = log_probs.shape
    U = U1 - 1
    if targets.shape != (B, U):
        raise ValueError(f"targets {tuple(targets.shape)} do not match lattice U={U}")
    device = log_probs.device
    if logit_lengths is None:
        logit_lengths = torch.full((B,), T, dtype=torch.long, device=device)
    if target_lengths is None:
        target_lengths = torch.full((B,), U, dtype=torch.long, device=device)
    logit_lengths = torch.as_tensor(logit_lengths, device=device).long()
    target_lengths = torch.as_tensor(target_lengths, device=device).long()

    blank_lp = log_probs[..., blank]  # B x T x U+1
    if U > 0:
        emit_lp = torch.gather(log_probs[:, :, :U, :], 3, targets.long()[:, None, :, None].expand(B, T, U, 1))[..., 0]
    else:
        emit_lp = log_probs.new_zeros(B, T, 0)

    zero = log_probs.new_zeros(B, 1)
    alphas = []
    prev = None
    for t in range(T):
        # cum[u] = sum_{k<u} emit(t, k)
        cum = torch.cat([zero, torch.cumsum(emit_lp[:, t], dim=1)], dim=1)
        if prev is None:
            alpha = cum
        else:
            arrive = prev + blank_lp[:, t - 1]
            alpha = cum + torch.logcumsumexp(arrive - cum, dim=1)
        alphas.append(alpha)
        prev = alpha
    if T == 0:
        losses = torch.full((B,), float("inf"), dtype=log_probs.dtype, device=device)
    else:
        alpha_all = torch.stack(alphas, dim=1)  # B x T x U+1
        tb = (logit_lengths - 1).clamp(min=0)
        idx = torch.arange(B, device=device)
        final = alpha_all[idx, tb, target_lengths] + blank_lp[idx, tb, target_lengths]
        losses = -final
        losses = torch.where(logit_lengths > 0, losses, torch.full_like(losses, float("inf")))
    if reduction == "sum":
        return losses.sum()
    if reduction == "mean":
        return losses.mean()
    return losses[0] if unbatched else losses
