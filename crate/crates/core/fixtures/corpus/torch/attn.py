import torch.nn as nn


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, dropout=0.1)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        y, _ = self.attn(x, x, x)
        return self.norm(x + y)
